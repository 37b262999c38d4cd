#include "fedsim/metrics.hpp"
