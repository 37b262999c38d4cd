#include "fedsim/outputs.hpp"
