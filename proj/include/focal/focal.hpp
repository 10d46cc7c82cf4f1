#pragma once

#include "focal/clustering.hpp"
#include "focal/config.hpp"
#include "focal/contrastive_loss.hpp"
#include "focal/dataset.hpp"
#include "focal/error.hpp"
#include "focal/extractor.hpp"
#include "focal/fusion.hpp"
#include "focal/io.hpp"
#include "focal/metrics.hpp"
#include "focal/parallel.hpp"
#include "focal/random.hpp"
#include "focal/synthetic.hpp"
#include "focal/tensor.hpp"
#include "focal/train.hpp"
