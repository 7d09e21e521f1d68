#pragma once

// Runs the dllrnn executable and captures its exit code and output streams.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace cli {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

class Sandbox {
 public:
  explicit Sandbox(const std::string& name)
      : root_(std::filesystem::temp_directory_path() / ("dllrnn_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(root_);
    std::filesystem::create_directories(root_);
  }
  ~Sandbox() { std::filesystem::remove_all(root_); }
  Sandbox(const Sandbox&) = delete;
  Sandbox& operator=(const Sandbox&) = delete;

  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }
  std::string str(const std::string& rel) const { return path(rel).string(); }

  void write(const std::string& rel, const std::string& text) const {
    std::ofstream out(path(rel), std::ios::binary);
    out << text;
  }

  // `args` is appended verbatim to the executable path.
  Result run(const std::string& args) const {
    const auto out = path(".stdout"), err = path(".stderr");
    const std::string cmd = quote(DLLRNN_CLI_PATH) + " " + args + " >" + quote(out.string()) + " 2>" + quote(err.string());
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  std::filesystem::path root_;
};

// Training log with the wall-clock field removed from every line.
inline std::string strip_wall(const std::string& log) {
  std::istringstream in(log);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto pos = line.find(" wall=");
    out += (pos == std::string::npos ? line : line.substr(0, pos)) + "\n";
  }
  return out;
}

}  // namespace cli
