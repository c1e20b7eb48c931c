#pragma once

#include "ctrleval/aspects.hpp"
#include "ctrleval/core.hpp"
#include "ctrleval/corpus_stats.hpp"
#include "ctrleval/error.hpp"
#include "ctrleval/metaeval.hpp"
#include "ctrleval/protocol.hpp"
#include "ctrleval/rng.hpp"
#include "ctrleval/scorer.hpp"
#include "ctrleval/textproc.hpp"

namespace ctrleval {

inline constexpr std::string_view kVersion = "0.1.0";

}  // namespace ctrleval
