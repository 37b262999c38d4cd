#include "fedsim/harness.hpp"
