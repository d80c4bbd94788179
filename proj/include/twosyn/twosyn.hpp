#pragma once

#include "twosyn/simcore.hpp"
#include "twosyn/rng.hpp"
#include "twosyn/packet.hpp"
#include "twosyn/link.hpp"
#include "twosyn/tcp.hpp"
#include "twosyn/host.hpp"
#include "twosyn/policies.hpp"
#include "twosyn/router.hpp"
#include "twosyn/topology.hpp"
#include "twosyn/metrics.hpp"
#include "twosyn/scenario.hpp"
#include "twosyn/simulation.hpp"
#include "twosyn/runner.hpp"
