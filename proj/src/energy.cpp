#include "fedsim/energy.hpp"
