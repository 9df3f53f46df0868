#pragma once

/**
 * Corpus ingestion and repo-family-aware splitting.
 *
 * Ingestion walks a directory tree whose first level is one directory per
 * repository. Splitting groups repositories into families (a fork map may
 * merge several repos into one family) and assigns whole families to
 * train/validation/test so related code never straddles a split boundary.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "linecomp/common.hpp"

namespace linecomp::corpus {

struct CorpusFile {
  std::string repo_id;        // first path component under the corpus root
  std::string relative_path;  // '/'-separated, relative to the root
  std::string extension;      // final dot-suffix of the file name, empty if none
  std::string text;           // raw UTF-8 content
};

struct IngestResult {
  std::vector<CorpusFile> files;               // sorted by relative_path
  std::vector<std::string> skipped_non_utf8;   // relative paths
};

inline std::string extension_of(std::string_view relative_path) {
  const auto slash = relative_path.find_last_of('/');
  const auto name = slash == std::string_view::npos ? relative_path : relative_path.substr(slash + 1);
  const auto dot = name.find_last_of('.');
  return dot == std::string_view::npos ? std::string{} : std::string(name.substr(dot + 1));
}

/// Reads every allowlisted file under `root`. Files that are not valid
/// UTF-8 are skipped and reported. Listing order is lexicographic by
/// relative path so repeated runs are identical.
inline IngestResult ingest(const std::filesystem::path& root,
                           const std::set<std::string>& extension_allowlist) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error("corpus: not a directory: " + root.string());

  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) paths.push_back(entry.path());
  }
  std::vector<std::string> rels;
  rels.reserve(paths.size());
  for (const auto& p : paths) rels.push_back(fs::relative(p, root).generic_string());
  std::sort(rels.begin(), rels.end());

  IngestResult result;
  for (const auto& rel : rels) {
    auto ext = extension_of(rel);
    if (!extension_allowlist.empty() && !extension_allowlist.count(ext)) continue;
    auto text = detail::read_file(root / fs::path(rel));
    if (!detail::is_valid_utf8(text)) {
      result.skipped_non_utf8.push_back(rel);
      continue;
    }
    const auto slash = rel.find('/');
    std::string repo = slash == std::string::npos ? std::string{} : rel.substr(0, slash);
    result.files.push_back({std::move(repo), rel, std::move(ext), std::move(text)});
  }
  return result;
}

struct SplitSpec {
  std::array<double, 3> ratios{0.80, 0.05, 0.15};     // train, validation, test
  std::map<std::string, std::string> fork_map;        // repo id -> family id
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0.0;
    for (double r : ratios) {
      if (r < 0.0) throw Error("corpus: negative split ratio");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("corpus: split ratios must sum to 1");
  }

  std::string family_of(const std::string& repo_id) const {
    const auto it = fork_map.find(repo_id);
    return it == fork_map.end() ? repo_id : it->second;
  }
};

struct Split {
  std::set<std::string> train, validation, test;  // family ids

  enum class Segment { train, validation, test };

  Segment segment_of(const std::string& family_id) const {
    if (train.count(family_id)) return Segment::train;
    if (validation.count(family_id)) return Segment::validation;
    if (test.count(family_id)) return Segment::test;
    throw Error("corpus: family not in split: " + family_id);
  }

  std::string to_text() const {
    std::ostringstream out;
    auto dump = [&](const char* name, const std::set<std::string>& seg) {
      for (const auto& f : seg) out << name << '\t' << f << '\n';
    };
    dump("train", train);
    dump("validation", validation);
    dump("test", test);
    return std::move(out).str();
  }
};

/// Assigns families to segments with a seeded shuffle followed by a greedy
/// fill toward the file-count targets. Every segment with a non-zero ratio
/// receives at least one family.
inline Split split_corpus(const std::vector<CorpusFile>& files, const SplitSpec& spec) {
  spec.validate();

  std::map<std::string, std::size_t> family_files;  // family -> file count
  for (const auto& f : files) family_files[spec.family_of(f.repo_id)]++;

  std::vector<std::string> families;
  families.reserve(family_files.size());
  for (const auto& [fam, n] : family_files) {
    (void)n;
    families.push_back(fam);
  }

  std::size_t non_zero = 0;
  for (double r : spec.ratios)
    if (r > 0.0) ++non_zero;
  if (families.size() < non_zero)
    throw Error("corpus: fewer families than non-empty split segments");

  // Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = families.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(families[i - 1], families[j]);
  }

  std::size_t total = files.size();
  Split split;
  std::array<std::set<std::string>*, 3> segments{&split.train, &split.validation, &split.test};

  std::size_t next = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (spec.ratios[s] <= 0.0) continue;
    std::size_t later_segments = 0;
    for (std::size_t t = s + 1; t < 3; ++t)
      if (spec.ratios[t] > 0.0) ++later_segments;
    const double target = spec.ratios[s] * static_cast<double>(total);
    std::size_t taken_files = 0;
    bool taken_any = false;
    while (next < families.size()) {
      // Earlier segments stop before eating into the one-family reserve of
      // later ones, so when this segment starts there are always more than
      // `later_segments` families left.
      const bool must_leave = families.size() - next <= later_segments;
      if (taken_any && (must_leave || static_cast<double>(taken_files) >= target)) break;
      segments[s]->insert(families[next]);
      taken_files += family_files.at(families[next]);
      taken_any = true;
      ++next;
    }
  }
  // Remainder goes to the last non-zero segment.
  for (std::size_t s = 3; s-- > 0;) {
    if (spec.ratios[s] > 0.0) {
      while (next < families.size()) segments[s]->insert(families[next++]);
      break;
    }
  }
  return split;
}

/// Fork map file format: one `repo_id<TAB>family_id` per line.
inline std::map<std::string, std::string> parse_fork_map(std::string_view text) {
  std::map<std::string, std::string> map;
  for (auto line : detail::split_lines(text, false)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error("corpus: fork map line missing tab");
    map.emplace(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1)));
  }
  return map;
}

inline std::map<std::string, std::string> load_fork_map(const std::filesystem::path& path) {
  return parse_fork_map(detail::read_file(path));
}

}  // namespace linecomp::corpus
