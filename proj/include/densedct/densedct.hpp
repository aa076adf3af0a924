#pragma once

#include "densedct/block_dct.hpp"
#include "densedct/channel_selection.hpp"
#include "densedct/colorspace.hpp"
#include "densedct/common.hpp"
#include "densedct/dense_tokenizer.hpp"
#include "densedct/image_io.hpp"
#include "densedct/probe_net.hpp"
#include "densedct/spectrum.hpp"
