#pragma once

#include "hyperrecon/autodiff.hpp"
#include "hyperrecon/data.hpp"
#include "hyperrecon/evaluation.hpp"
#include "hyperrecon/hypermodel.hpp"
#include "hyperrecon/image_io.hpp"
#include "hyperrecon/service.hpp"
#include "hyperrecon/signal.hpp"
#include "hyperrecon/solver.hpp"
#include "hyperrecon/training.hpp"
