#ifndef FOX_CLI_HPP_
#define FOX_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace fox {

// Exit status: 0 success, 1 a check failed, 2 usage or config error,
// 3 runtime failure. args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fox

#endif  // FOX_CLI_HPP_
