#pragma once

#include "eegcvae/asr.hpp"
#include "eegcvae/checkpoint.hpp"
#include "eegcvae/config.hpp"
#include "eegcvae/cvae.hpp"
#include "eegcvae/dsp.hpp"
#include "eegcvae/errors.hpp"
#include "eegcvae/gradcheck_suite.hpp"
#include "eegcvae/kpca.hpp"
#include "eegcvae/nn/gradcheck.hpp"
#include "eegcvae/nn/layers.hpp"
#include "eegcvae/nn/losses.hpp"
#include "eegcvae/nn/optim.hpp"
#include "eegcvae/pipeline.hpp"
#include "eegcvae/random.hpp"
#include "eegcvae/synth.hpp"
#include "eegcvae/tensor.hpp"
