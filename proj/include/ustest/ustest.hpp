#pragma once

#include "ustest/config.hpp"
#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/estimators.hpp"
#include "ustest/experiments.hpp"
#include "ustest/isserlis.hpp"
#include "ustest/kernel.hpp"
#include "ustest/moments.hpp"
#include "ustest/normal.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/rng.hpp"
#include "ustest/selfcheck.hpp"
#include "ustest/version.hpp"
