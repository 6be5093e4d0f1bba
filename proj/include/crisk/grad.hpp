#pragma once

#include "crisk/grad/adam.hpp"
#include "crisk/grad/checkpoint.hpp"
#include "crisk/grad/gradcheck.hpp"
#include "crisk/grad/layers.hpp"
#include "crisk/grad/ops.hpp"
#include "crisk/grad/tensor.hpp"
#include "crisk/grad/var.hpp"
