#pragma once

// Umbrella header; the HTTP binding (capture_server.hpp) is kept out so
// that users of the library do not pull in the HTTP stack.

#include "keystroke/capture_service.hpp"
#include "keystroke/dataset.hpp"
#include "keystroke/eer.hpp"
#include "keystroke/error.hpp"
#include "keystroke/evaluation.hpp"
#include "keystroke/events.hpp"
#include "keystroke/keycodes.hpp"
#include "keystroke/kruskal_wallis.hpp"
#include "keystroke/password_metrics.hpp"
#include "keystroke/report.hpp"
#include "keystroke/synthetic.hpp"
#include "keystroke/verifier.hpp"
