#include "fedsim/csv.hpp"
