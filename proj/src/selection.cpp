#include "fedsim/selection.hpp"
