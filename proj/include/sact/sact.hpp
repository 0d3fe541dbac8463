#pragma once

#include "sact/attention.hpp"
#include "sact/awareness.hpp"
#include "sact/composer.hpp"
#include "sact/data.hpp"
#include "sact/decoder.hpp"
#include "sact/gradcheck.hpp"
#include "sact/harness.hpp"
#include "sact/io.hpp"
#include "sact/model.hpp"
#include "sact/proposal.hpp"
#include "sact/tensor.hpp"
