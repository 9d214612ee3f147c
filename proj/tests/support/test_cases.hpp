#pragma once

#include <string>

#include "opfcert/data/dataset.hpp"
#include "opfcert/grid/admittance.hpp"
#include "opfcert/grid/grid_model.hpp"

namespace opfcert::testing {

std::string data_path(const std::string& relative);

grid::GridModel load_bundled_case(const std::string& name);

/// Two buses joined by a lossless line of reactance x. Bus 1 is the slack with a generator;
/// bus 2 carries a load (p_load, q_load) in MW / MVAr on a 100 MVA base.
std::string two_bus_case_text(double x = 0.1, double p_load = 0.0, double q_load = 0.0, double rate_mva = 0.0,
                              double vmax = 1.1, double vmin = 0.9);

/// Same network as two_bus_case_text as an in-memory model, with optional series
/// resistance and line charging.
grid::GridModel two_bus_model(double r, double x, double b_charging, double p_load, double q_load,
                              double flow_limit = 5.0);

/// OPF-labeled scenarios of model with default sampling settings and n samples.
data::LabeledDataset labeled_dataset(const grid::GridModel& model, std::size_t n, std::uint64_t seed = 0);

}  // namespace opfcert::testing
