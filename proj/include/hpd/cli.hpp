#ifndef HPD_CLI_HPP
#define HPD_CLI_HPP

namespace hpd {

// Entry point behind main(). Returns the process exit status: 0 success,
// 1 validation/data error, 2 internal invariant violation.
int run_cli(int argc, const char* const* argv);

}  // namespace hpd

#endif  // HPD_CLI_HPP
