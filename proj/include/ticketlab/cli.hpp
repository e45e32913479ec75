#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ticketlab {

/// Exit codes: 0 success, 1 configuration or usage error, 2 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Help of the top-level app followed by every subcommand, in declaration order.
std::string cli_full_help();

}  // namespace ticketlab
