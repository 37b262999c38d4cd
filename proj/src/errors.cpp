#include "fedsim/errors.hpp"
