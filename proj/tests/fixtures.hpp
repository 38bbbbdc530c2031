#pragma once

#include <filesystem>
#include <iterator>
#include <random>
#include <string>

#ifndef COACHED_FIXTURE_DIR
#error "COACHED_FIXTURE_DIR must be defined"
#endif

namespace coached::testing {

inline std::string fixture(const std::string& name) {
  return (std::filesystem::path(COACHED_FIXTURE_DIR) / name).string();
}

// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("coached-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Random prose over a small vocabulary, with paragraph and line breaks.
inline std::string random_body(std::mt19937_64& rng, std::size_t approx_chars) {
  static const char* kWords[] = {"sleep", "bed", "night", "diary", "worry", "nap", "light", "restriction",
                                 "stimulus", "control", "relax", "breathe", "wake", "early", "late", "therapist",
                                 "insomnia", "caffeine", "schedule", "weekend", "a", "an", "the", "of",
                                 "supercalifragilisticexpialidocious", "é", "naïve", "日本"};
  std::uniform_int_distribution<std::size_t> word(0, std::size(kWords) - 1);
  std::uniform_int_distribution<int> roll(0, 99);
  std::string out;
  std::size_t chars = 0;
  while (chars < approx_chars) {
    const std::string w = kWords[word(rng)];
    out += w;
    chars += w.size();
    const int r = roll(rng);
    if (r < 4) {
      out += ".\n\n";
    } else if (r < 8) {
      out += "\n";
    } else if (r < 14) {
      out += ". ";
    } else {
      out += " ";
    }
    chars += 2;
  }
  return out;
}

}  // namespace coached::testing
