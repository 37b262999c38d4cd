#include "fedsim/rng.hpp"
