#include "fedsim/distmatrix.hpp"
