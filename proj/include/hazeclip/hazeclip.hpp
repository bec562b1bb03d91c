#pragma once

#include "hazeclip/errors.hpp"
#include "hazeclip/image.hpp"
#include "hazeclip/image_io.hpp"
#include "hazeclip/linalg.hpp"
#include "hazeclip/resample.hpp"
#include "hazeclip/synthetic.hpp"
#include "hazeclip/encoder.hpp"
#include "hazeclip/toy_encoder.hpp"
#include "hazeclip/encoder_registry.hpp"
#include "hazeclip/prompts.hpp"
#include "hazeclip/regions.hpp"
#include "hazeclip/losses.hpp"
#include "hazeclip/backbone.hpp"
#include "hazeclip/checkpoint.hpp"
#include "hazeclip/training.hpp"
#include "hazeclip/evaluation.hpp"
