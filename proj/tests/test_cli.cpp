#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sphevar/cli.hpp"

namespace fs = std::filesystem;
using sphevar::Json;
using sphevar::cli::run_cli;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sphevar_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  static std::string slurp(const std::string& p) { return sphevar::io::read_file(p); }

  static std::vector<std::string> lines(const std::string& p) {
    std::vector<std::string> v;
    std::istringstream in(slurp(p));
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
  }

  void write(const std::string& name, const std::string& content) const { std::ofstream(dir_ / name) << content; }

  std::vector<std::string> small_train(const std::string& out) const {
    return {"train",       "--n-train", "400", "--n-test", "100", "--input-dim", "8", "--classes", "3",
            "--hidden",    "6,5",       "--epochs", "2", "--batch-size", "64", "--mc-samples", "2", "--out", out};
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

}  // namespace

TEST_F(Cli, HelpAndMissingSubcommand) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_NE(out_.str().find("student-teacher"), std::string::npos);
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"fit"}), 2);
  EXPECT_EQ(run({"theory", "--no-such-flag"}), 2);
}

TEST_F(Cli, TheoryConfigErrors) {
  EXPECT_EQ(run({"theory", "--kappa-min", "10", "--kappa-max", "1", "--out", path("t")}), 2);
  EXPECT_NE(err_.str().find("kappa-max"), std::string::npos);
  EXPECT_EQ(run({"theory", "--mc-samples", "0", "--out", path("t")}), 2);
  EXPECT_EQ(run({"theory", "--dim", "1", "--out", path("t")}), 2);
  EXPECT_EQ(run({"theory", "--dim", "ten", "--out", path("t")}), 2);
}

TEST_F(Cli, TheoryWritesTableAndSummary) {
  const std::string out = path("theory");
  ASSERT_EQ(run({"theory", "--dim", "10", "--kappa-min", "0.1", "--kappa-max", "1000", "--kappa-steps", "5",
                 "--mc-samples", "4000", "--mc-inputs", "4", "--out", out}),
            0)
      << err_.str();
  const auto rows = lines(out + "/theory.csv");
  ASSERT_EQ(rows.size(), 2u + 6u);
  EXPECT_EQ(rows[0], "# sphevar-schema v1 theory");
  EXPECT_EQ(rows[1].rfind("kappa,sigma_u_sq_mc,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("0,", 0), 0u);
  const Json s = Json::parse(slurp(out + "/theory_summary.json"));
  EXPECT_EQ(s.at("rows").get<int>(), 6);
  EXPECT_TRUE(s.at("pass").at("consistency").get<bool>());
  EXPECT_TRUE(s.at("gated_pass").get<bool>());
  const Json r = Json::parse(slurp(out + "/config.resolved"));
  EXPECT_EQ(r.at("dim").get<int>(), 10);
  EXPECT_EQ(r.at("mc-samples").get<int>(), 4000);
}

TEST_F(Cli, StrictTheoryReportsToleranceFailure) {
  EXPECT_EQ(run({"theory", "--dim", "100", "--kappa-min", "10", "--kappa-max", "1000", "--kappa-steps", "3",
                 "--no-zero-row", "--mc-samples", "2000", "--mc-inputs", "2", "--strict", "--out", path("s")}),
            3);
  EXPECT_FALSE(Json::parse(slurp(path("s/theory_summary.json"))).at("gated_pass").get<bool>());
}

TEST_F(Cli, ConfigFileKeysAndPrecedence) {
  write("bad.json", R"({"dim": 10, "dimm": 3})");
  EXPECT_EQ(run({"theory", "--config", path("bad.json"), "--out", path("x")}), 2);
  EXPECT_NE(err_.str().find("dimm"), std::string::npos);
  write("broken.json", "{");
  EXPECT_EQ(run({"theory", "--config", path("broken.json"), "--out", path("x")}), 2);
  write("good.json", R"({"dim": 12, "kappa-steps": 2, "mc-samples": 1000, "mc-inputs": 2, "zero-row": false})");
  ASSERT_EQ(run({"theory", "--config", path("good.json"), "--dim", "8", "--out", path("g")}), 0) << err_.str();
  const Json r = Json::parse(slurp(path("g/config.resolved")));
  EXPECT_EQ(r.at("dim").get<int>(), 8);
  EXPECT_EQ(r.at("kappa-steps").get<int>(), 2);
  EXPECT_FALSE(r.at("zero-row").get<bool>());
  EXPECT_EQ(lines(path("g/theory.csv")).size(), 4u);
}

TEST_F(Cli, ResolvedConfigReproducesRun) {
  ASSERT_EQ(run({"student-teacher", "--variable", "dim", "--grid", "5,10", "--repeats", "2", "--n-samples", "50",
                 "--steps", "50", "--out", path("a")}),
            0)
      << err_.str();
  fs::copy_file(path("a/config.resolved"), path("resolved.json"));
  ASSERT_EQ(run({"student-teacher", "--config", path("resolved.json"), "--out", path("b")}), 0) << err_.str();
  EXPECT_EQ(slurp(path("a/student_teacher.csv")), slurp(path("b/student_teacher.csv")));
}

TEST_F(Cli, StudentTeacherOutputs) {
  ASSERT_EQ(run({"student-teacher", "--grid", "0.1,0.4", "--repeats", "3", "--dim", "10", "--n-samples", "200",
                 "--out", path("st")}),
            0)
      << err_.str();
  const auto rows = lines(path("st/student_teacher.csv"));
  ASSERT_EQ(rows.size(), 2u + 6u);
  EXPECT_EQ(rows[0], "# sphevar-schema v1 student-teacher");
  const Json s = Json::parse(slurp(path("st/student_teacher_summary.json")));
  EXPECT_EQ(s.at("grid").size(), 2u);
  EXPECT_EQ(s.at("expected_sign").get<int>(), 1);
  EXPECT_EQ(Json::parse(slurp(path("st/config.resolved"))).at("grid"), Json::array({0.1, 0.4}));
  EXPECT_EQ(run({"student-teacher", "--variable", "temperature", "--out", path("st2")}), 2);
  EXPECT_EQ(run({"student-teacher", "--grid", "0.4,0.1", "--out", path("st2")}), 2);
}

TEST_F(Cli, DefaultGridIsResolved) {
  ASSERT_EQ(run({"student-teacher", "--variable", "n_samples", "--repeats", "1", "--dim", "5", "--steps", "5",
                 "--out", path("d")}),
            0);
  EXPECT_EQ(Json::parse(slurp(path("d/config.resolved"))).at("grid"), Json::array({100.0, 300.0, 1000.0, 3000.0}));
}

TEST_F(Cli, TrainWritesCheckpointLogAndCalibration) {
  ASSERT_EQ(run(small_train(path("tr"))), 0) << err_.str();
  const auto log = lines(path("tr/train_log.csv"));
  ASSERT_EQ(log.size(), 2u + 2u);
  EXPECT_EQ(log[0], "# sphevar-schema v1 train");
  EXPECT_EQ(log[1], "epoch,beta,nll,kl_total,kl_scale,loss,sigma_eff_0,sigma_eff_1,eval_accuracy,eval_nll,eval_ece");
  const Json cal = Json::parse(slurp(path("tr/calibration.json")));
  EXPECT_TRUE(cal.at("variational").get<bool>());
  EXPECT_EQ(cal.at("deterministic").at("bins").size(), 15u);
  EXPECT_EQ(cal.at("monte_carlo").at("samples").get<int>(), 2);
  const auto cp = sphevar::load_checkpoint(path("tr/checkpoint.json"));
  EXPECT_EQ(cp.net.depth(), 2u);
  EXPECT_EQ(cp.metadata.at("dataset").at("kind"), "synthetic");
  EXPECT_DOUBLE_EQ(Json::parse(slurp(path("tr/config.resolved"))).at("kl-scale").get<double>(), 1.0 / 400);
}

TEST_F(Cli, BetaZeroIsBaseline) {
  auto args = small_train(path("b0"));
  args.insert(args.end(), {"--beta", "0"});
  ASSERT_EQ(run(args), 0) << err_.str();
  const auto t = sphevar::io::parse_csv(slurp(path("b0/train_log.csv")));
  ASSERT_EQ(t.header[3], "kl_total");
  for (const auto& row : t.rows) {
    EXPECT_EQ(sphevar::io::parse_double(row[3]), 0.0);
    EXPECT_EQ(sphevar::io::parse_double(row[6]), 0.0);
  }
  EXPECT_FALSE(Json::parse(slurp(path("b0/calibration.json"))).at("variational").get<bool>());
}

TEST_F(Cli, TrainConfigAndNumericalErrors) {
  auto args = small_train(path("e"));
  args.insert(args.end(), {"--beta", "1.5"});
  EXPECT_EQ(run(args), 2);
  args = small_train(path("e"));
  args.insert(args.end(), {"--optimizer", "lbfgs"});
  EXPECT_EQ(run(args), 2);
  args = small_train(path("e"));
  args.insert(args.end(), {"--grad-norm-cap", "1e-12"});
  EXPECT_EQ(run(args), 5);
  EXPECT_EQ(run({"train", "--train-csv", path("only.csv"), "--out", path("e")}), 2);
}

TEST_F(Cli, TrainFromCsv) {
  std::string train = "x0,x1,label\n", test = "x0,x1,label\n";
  for (int i = 0; i < 60; ++i) {
    const int c = i % 2;
    const std::string row = std::to_string(c * 2.0 - 1.0 + 0.01 * i) + "," + std::to_string(0.3 * (i % 5)) + "," +
                            std::to_string(c) + "\n";
    (i < 40 ? train : test) += row;
  }
  write("train.csv", train);
  write("test.csv", test);
  ASSERT_EQ(run({"train", "--train-csv", path("train.csv"), "--test-csv", path("test.csv"), "--hidden", "4",
                 "--epochs", "2", "--batch-size", "16", "--out", path("csv")}),
            0)
      << err_.str();
  const auto cp = sphevar::load_checkpoint(path("csv/checkpoint.json"));
  EXPECT_EQ(cp.metadata.at("dataset").at("kind"), "csv");
  EXPECT_EQ(cp.net.input_dim(), 2);
  EXPECT_EQ(run({"landscape", "--checkpoint", path("csv/checkpoint.json"), "--steps", "3", "--out", path("csvl")}), 0)
      << err_.str();
  EXPECT_EQ(run({"train", "--train-csv", path("missing.csv"), "--test-csv", path("test.csv"), "--out", path("m")}), 4);
}

TEST_F(Cli, LandscapeGridsShareAxes) {
  ASSERT_EQ(run(small_train(path("tr"))), 0);
  ASSERT_EQ(run({"landscape", "--checkpoint", path("tr/checkpoint.json"), "--mode", "2d", "--steps", "51",
                 "--batch-size", "64", "--out", path("l2")}),
            0)
      << err_.str();
  const auto e = sphevar::io::parse_csv(slurp(path("l2/landscape_empirical.csv")));
  const auto a = sphevar::io::parse_csv(slurp(path("l2/landscape_analytic.csv")));
  EXPECT_EQ(e.rows.size(), 2601u);
  EXPECT_EQ(a.rows.size(), 2601u);
  EXPECT_EQ(e.header, (std::vector<std::string>{"a", "b", "loss"}));
  EXPECT_EQ(a.header, (std::vector<std::string>{"a", "b", "delta_loss"}));
  for (std::size_t i = 0; i < e.rows.size(); ++i) {
    ASSERT_EQ(e.rows[i][0], a.rows[i][0]);
    ASSERT_EQ(e.rows[i][1], a.rows[i][1]);
  }
  EXPECT_EQ(lines(path("l2/landscape_empirical.csv"))[0], "# sphevar-schema v1 landscape");

  ASSERT_EQ(run({"landscape", "--checkpoint", path("tr/checkpoint.json"), "--mode", "1d", "--steps", "11",
                 "--kappa", "5", "--out", path("l1")}),
            0);
  const auto one = sphevar::io::parse_csv(slurp(path("l1/landscape_empirical.csv")));
  EXPECT_EQ(one.header[0], "x");
  EXPECT_EQ(one.header[1], "y");
  const Json s = Json::parse(slurp(path("l1/landscape_summary.json")));
  EXPECT_EQ(s.at("kappa").get<double>(), 5.0);
  EXPECT_TRUE(s.contains("minimum_near_center"));
}

TEST_F(Cli, LandscapeErrors) {
  EXPECT_EQ(run({"landscape", "--out", path("l")}), 2);
  EXPECT_EQ(run({"landscape", "--checkpoint", path("none.json"), "--out", path("l")}), 4);
  ASSERT_EQ(run(small_train(path("tr"))), 0);
  EXPECT_EQ(run({"landscape", "--checkpoint", path("tr/checkpoint.json"), "--layer", "2", "--out", path("l")}), 2);
  EXPECT_EQ(run({"landscape", "--checkpoint", path("tr/checkpoint.json"), "--mode", "3d", "--out", path("l")}), 2);

  Json cp = Json::parse(slurp(path("tr/checkpoint.json")));
  cp["version"] = 2;
  write("v2.json", cp.dump());
  EXPECT_EQ(run({"landscape", "--checkpoint", path("v2.json"), "--out", path("l")}), 2);
  EXPECT_NE(err_.str().find("version"), std::string::npos);
  cp["version"] = 1;
  cp["metadata"].erase("dataset");
  write("nodata.json", cp.dump());
  EXPECT_EQ(run({"landscape", "--checkpoint", path("nodata.json"), "--out", path("l")}), 2);
}

TEST_F(Cli, RerunIsByteIdentical) {
  const auto once = [&](const std::vector<std::string>& args, const std::vector<std::string>& files) {
    EXPECT_EQ(run(args), 0) << err_.str();
    std::vector<std::string> content;
    for (const auto& f : files) content.push_back(slurp(path(f)));
    return content;
  };
  const auto train = small_train(path("r"));
  const std::vector<std::string> tf{"r/checkpoint.json", "r/train_log.csv", "r/calibration.json", "r/config.resolved"};
  EXPECT_EQ(once(train, tf), once(train, tf));
  const std::vector<std::string> land{"landscape", "--checkpoint", path("r/checkpoint.json"), "--steps", "7",
                                      "--out", path("rl")};
  const std::vector<std::string> lf{"rl/landscape_empirical.csv", "rl/landscape_analytic.csv",
                                    "rl/landscape_summary.json"};
  EXPECT_EQ(once(land, lf), once(land, lf));
  auto seeded = land;
  seeded.insert(seeded.end(), {"--seed", "1"});
  EXPECT_EQ(run(seeded), 0);
  const std::string other = slurp(path("rl/landscape_empirical.csv"));
  EXPECT_NE(other, once(land, lf)[0]);
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  const fs::path cwd = fs::current_path();
  fs::current_path(dir_);
  ::setenv(sphevar::cli::kOutEnv, path("env").c_str(), 1);
  const int code = run({"theory", "--dim", "5", "--kappa-steps", "2", "--mc-samples", "500", "--mc-inputs", "2"});
  ::unsetenv(sphevar::cli::kOutEnv);
  fs::current_path(cwd);
  ASSERT_EQ(code, 0) << err_.str();
  EXPECT_TRUE(fs::exists(path("env/theory.csv")));
  EXPECT_TRUE(fs::exists(path("env/config.resolved")));
}
