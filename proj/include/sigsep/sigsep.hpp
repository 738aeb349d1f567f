#pragma once

#include "sigsep/common.hpp"
#include "sigsep/random.hpp"
#include "sigsep/path.hpp"
#include "sigsep/signature.hpp"
#include "sigsep/ensemble.hpp"
#include "sigsep/premetric.hpp"
#include "sigsep/assignment.hpp"
#include "sigsep/inversion.hpp"
#include "sigsep/lab.hpp"
#include "sigsep/io.hpp"
