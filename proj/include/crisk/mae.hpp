#pragma once

#include "crisk/mae/model.hpp"
#include "crisk/mae/patch.hpp"
#include "crisk/mae/volume.hpp"
