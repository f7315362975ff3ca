#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "zoomcam/io.hpp"

namespace zoomcam::test {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

// Runs the zoomcam binary with `args`, capturing stdout and stderr through
// files in `scratch`.
inline CliResult run_cli(const std::vector<std::string>& args,
                         const std::filesystem::path& scratch) {
  std::string cmd = shell_quote(ZOOMCAM_CLI_PATH);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  const auto out_path = scratch / "cli.stdout";
  const auto err_path = scratch / "cli.stderr";
  cmd += " >" + shell_quote(out_path.string()) + " 2>" + shell_quote(err_path.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_bytes(out_path);
  r.err = read_bytes(err_path);
  return r;
}

}  // namespace zoomcam::test
