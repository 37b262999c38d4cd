#include "fedsim/model.hpp"
