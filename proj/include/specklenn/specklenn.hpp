#pragma once

#include "specklenn/tensor.hpp"
#include "specklenn/autodiff.hpp"
#include "specklenn/adam.hpp"
#include "specklenn/rng.hpp"
#include "specklenn/parallel.hpp"
#include "specklenn/dataset.hpp"
#include "specklenn/embedding.hpp"
#include "specklenn/checkpoint.hpp"
#include "specklenn/triplet.hpp"
#include "specklenn/trainer.hpp"
#include "specklenn/fewshot.hpp"
#include "specklenn/simulator.hpp"
#include "specklenn/pipeline.hpp"
#include "specklenn/baseline.hpp"
#include "specklenn/eval.hpp"
#include "specklenn/png.hpp"
#include "specklenn/service.hpp"
