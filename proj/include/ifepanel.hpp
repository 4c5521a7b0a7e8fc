#pragma once

#include "ifepanel/error.hpp"
#include "ifepanel/random.hpp"
#include "ifepanel/panel.hpp"
#include "ifepanel/factor_pca.hpp"
#include "ifepanel/residualize.hpp"
#include "ifepanel/ife_estimator.hpp"
#include "ifepanel/inference.hpp"
#include "ifepanel/factor_count.hpp"
#include "ifepanel/nuclear_norm.hpp"
#include "ifepanel/sim_lab.hpp"
#include "ifepanel/io.hpp"
