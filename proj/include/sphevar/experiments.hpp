#pragma once

#include "sphevar/experiments/classifier.hpp"
#include "sphevar/experiments/dataset.hpp"
#include "sphevar/experiments/landscape.hpp"
#include "sphevar/experiments/student_teacher.hpp"
#include "sphevar/experiments/theory.hpp"
