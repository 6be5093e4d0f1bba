#pragma once

#include "crisk/models/cif_model.hpp"
#include "crisk/models/config.hpp"
#include "crisk/models/deephit.hpp"
#include "crisk/models/dsm.hpp"
#include "crisk/models/nfg.hpp"
#include "crisk/models/train.hpp"
