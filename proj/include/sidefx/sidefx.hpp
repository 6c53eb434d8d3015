#pragma once

// Everything except the HTTP server, which needs httplib.

#include "sidefx/annotation.hpp"
#include "sidefx/classifier.hpp"
#include "sidefx/corpus.hpp"
#include "sidefx/digest.hpp"
#include "sidefx/error.hpp"
#include "sidefx/lexicon.hpp"
#include "sidefx/matcher.hpp"
#include "sidefx/metrics.hpp"
#include "sidefx/pipeline.hpp"
#include "sidefx/random.hpp"
#include "sidefx/stats.hpp"
#include "sidefx/synthetic.hpp"
#include "sidefx/text.hpp"
#include "sidefx/workspace.hpp"
