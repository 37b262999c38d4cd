#include "fedsim/dataio.hpp"
