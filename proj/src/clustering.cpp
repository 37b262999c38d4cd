#include "fedsim/clustering.hpp"
