#pragma once

#include <iosfwd>

namespace qfed {

/**
 * Command-line entry point. Subcommands: gen-data, train, fed, eval,
 * gradcheck, partition, experiment. Returns 0 on success, 1 on a runtime
 * failure and 2 on a usage error.
 */
int cli_main(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace qfed
