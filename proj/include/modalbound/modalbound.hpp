#pragma once

#include "modalbound/bounds.hpp"
#include "modalbound/dataset_io.hpp"
#include "modalbound/error.hpp"
#include "modalbound/harness.hpp"
#include "modalbound/latent.hpp"
#include "modalbound/modality.hpp"
#include "modalbound/model.hpp"
#include "modalbound/numeric.hpp"
#include "modalbound/rng.hpp"
#include "modalbound/synthgen.hpp"
#include "modalbound/table.hpp"
#include "modalbound/train.hpp"
