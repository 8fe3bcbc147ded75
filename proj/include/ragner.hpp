#pragma once

#include "ragner/corpus.hpp"
#include "ragner/digest.hpp"
#include "ragner/embedding.hpp"
#include "ragner/error.hpp"
#include "ragner/eval.hpp"
#include "ragner/llm.hpp"
#include "ragner/manifest.hpp"
#include "ragner/mock_llm.hpp"
#include "ragner/parse.hpp"
#include "ragner/prompt.hpp"
#include "ragner/report.hpp"
#include "ragner/retrieval.hpp"
#include "ragner/rng.hpp"
#include "ragner/runner.hpp"
#include "ragner/vectors.hpp"
