#pragma once

#include "backtracing/cache.hpp"
#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/error.hpp"
#include "backtracing/evaluation.hpp"
#include "backtracing/hash.hpp"
#include "backtracing/judge.hpp"
#include "backtracing/lexical.hpp"
#include "backtracing/likelihood.hpp"
#include "backtracing/mock.hpp"
#include "backtracing/protocol.hpp"
#include "backtracing/ranking.hpp"
#include "backtracing/registry.hpp"
#include "backtracing/runner.hpp"
#include "backtracing/similarity.hpp"
#include "backtracing/text.hpp"
#include "backtracing/transport.hpp"
