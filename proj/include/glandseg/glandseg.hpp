#pragma once

#include "glandseg/autodiff/checkpoint.hpp"
#include "glandseg/autodiff/graph.hpp"
#include "glandseg/autodiff/ops.hpp"
#include "glandseg/autodiff/optim.hpp"
#include "glandseg/autodiff/tensor.hpp"
#include "glandseg/error.hpp"
#include "glandseg/gradcheck.hpp"
#include "glandseg/image_io.hpp"
#include "glandseg/imaging.hpp"
#include "glandseg/loss.hpp"
#include "glandseg/metrics.hpp"
#include "glandseg/model.hpp"
#include "glandseg/parallel.hpp"
#include "glandseg/pipeline/config.hpp"
#include "glandseg/pipeline/pipeline.hpp"
#include "glandseg/pipeline/synth.hpp"
#include "glandseg/postproc.hpp"
#include "glandseg/random.hpp"
#include "glandseg/raster.hpp"
#include "glandseg/stain.hpp"
#include "glandseg/texture.hpp"
#include "glandseg/train.hpp"
