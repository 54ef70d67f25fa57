#pragma once

#include "charlee/baselines.hpp"
#include "charlee/data/dataset.hpp"
#include "charlee/data/formats.hpp"
#include "charlee/data/slicing.hpp"
#include "charlee/data/synthetic.hpp"
#include "charlee/data/transforms.hpp"
#include "charlee/episode.hpp"
#include "charlee/errors.hpp"
#include "charlee/evaluation.hpp"
#include "charlee/groups.hpp"
#include "charlee/models/classifier.hpp"
#include "charlee/models/encoder.hpp"
#include "charlee/models/heads.hpp"
#include "charlee/models/model.hpp"
#include "charlee/numerics/adam.hpp"
#include "charlee/numerics/params.hpp"
#include "charlee/numerics/rng.hpp"
#include "charlee/numerics/special.hpp"
#include "charlee/numerics/tape.hpp"
#include "charlee/ranking.hpp"
#include "charlee/rollout.hpp"
#include "charlee/training.hpp"
#include "charlee/config.hpp"
#include "charlee/pipeline.hpp"
