#include "fedsim/fedcore.hpp"
