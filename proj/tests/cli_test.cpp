/**
 * End-to-end tests for the command line: corpus preparation, artifact
 * training, one-shot completion, offline evaluation, and the stdio service,
 * all exercised through real subprocesses against a synthetic corpus.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "linecomp/corpus.hpp"
#include "linecomp/eval.hpp"
#include "linecomp/formatter.hpp"
#include "linecomp/ngram.hpp"
#include "linecomp/tokenizer.hpp"
#include "support/subprocess.hpp"
#include "support/synthetic_corpus.hpp"

using namespace linecomp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

testsupport::SubprocessResult cli(std::vector<std::string> args, const std::string& input = "") {
  args.insert(args.begin(), LINECOMP_CLI_PATH);
  return testsupport::run_subprocess(args, input);
}

void require_ok(const testsupport::SubprocessResult& result, const std::string& what) {
  if (result.exit_code != 0)
    throw std::runtime_error(what + " failed (" + std::to_string(result.exit_code) +
                             "): " + result.err);
}

struct CliWorkspace {
  fs::path root;
  fs::path raw;
  fs::path prepared;
  fs::path artifacts;
  fs::path config;
  std::vector<corpus::CorpusFile> files;
  std::string prep_stdout;
};

/// One prepared pipeline shared by every test case: raw corpus on disk,
/// prep + train-tokenizer + train-lm already run, config file written.
const CliWorkspace& workspace() {
  static const CliWorkspace ws = [] {
    CliWorkspace w;
    w.root = fs::temp_directory_path() / ("linecomp_cli_" + std::to_string(::getpid()));
    fs::remove_all(w.root);
    w.raw = w.root / "raw";
    w.prepared = w.root / "prepared";
    w.artifacts = w.root / "artifacts";
    w.config = w.artifacts / "engine.conf";

    w.files = testsupport::make_corpus({.repos = 6, .files_per_repo = 4, .seed = 51});
    testsupport::write_corpus(w.raw, w.files);
    fs::create_directories(w.artifacts);

    const auto prep = cli({"prep", "--corpus", w.raw.string(), "--out", w.prepared.string(),
                           "--dropout", "0.5", "--seed", "3", "--split-ratios", "0.8", "0.1",
                           "0.1", "--split-seed", "1"});
    require_ok(prep, "prep");
    w.prep_stdout = prep.out;

    require_ok(cli({"train-tokenizer", "--corpus", (w.prepared / "train").string(),
                    "--vocab-size", "300", "--out", (w.artifacts / "tok.bin").string()}),
               "train-tokenizer");
    require_ok(cli({"train-lm", "--corpus", (w.prepared / "train").string(), "--tokenizer",
                    (w.artifacts / "tok.bin").string(), "--order", "3", "--backoff", "0.4",
                    "--out", (w.artifacts / "lm.bin").string()}),
               "train-lm");

    detail::write_file(w.config,
                       "# engine configuration\n"
                       "tokenizer = tok.bin\n"
                       "model = lm.bin\n"
                       "beam_width = 5\n"
                       "max_iterations = 20\n"
                       "termination_ratio = 3.0\n"
                       "max_context = 256\n");
    return w;
  }();
  return ws;
}

std::vector<std::string> split_lines_copy(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') {
      out.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

bool is_subsequence(const std::vector<std::string>& needle,
                    const std::vector<std::string>& haystack) {
  std::size_t i = 0;
  for (const auto& line : haystack)
    if (i < needle.size() && needle[i] == line) ++i;
  return i == needle.size();
}

}  // namespace

TEST_CASE("prep writes normalized segments and the split table") {
  const auto& w = workspace();
  CHECK(w.prep_stdout == "prepared 24 files into " + w.prepared.string() + "\n");

  const auto split_lines = split_lines_copy(detail::read_file(w.prepared / "split.tsv"));
  REQUIRE(split_lines.size() == 6);
  std::set<std::string> families;
  for (const auto& line : split_lines) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    const auto segment = line.substr(0, tab);
    CHECK((segment == "train" || segment == "validation" || segment == "test"));
    CHECK(families.insert(line.substr(tab + 1)).second);
  }
  for (int repo = 0; repo < 6; ++repo)
    CHECK(families.count("repo_0" + std::to_string(repo)) == 1);

  for (const auto& file : w.files) {
    // Exactly one segment holds each file.
    std::vector<fs::path> hits;
    for (const char* segment : {"train", "validation", "test"}) {
      const auto path = w.prepared / segment / file.relative_path;
      if (fs::exists(path)) hits.push_back(path);
    }
    REQUIRE(hits.size() == 1);

    const auto prepared_text = detail::read_file(hits[0]);
    const auto normalized = formatter::normalize(file.text);
    const bool in_train = hits[0].string().find("/train/") != std::string::npos;
    if (!in_train) {
      CHECK(prepared_text == normalized);  // dropout applies to train only
    } else {
      // Import dropout only deletes lines; everything kept is unchanged.
      CHECK(is_subsequence(split_lines_copy(prepared_text), split_lines_copy(normalized)));
    }
  }

  // Dropout with probability 0.5 removes some unindented import somewhere.
  std::size_t imports_raw = 0, imports_kept = 0;
  for (const auto& file : w.files) {
    const auto path = w.prepared / "train" / file.relative_path;
    if (!fs::exists(path)) continue;
    for (const auto& line : split_lines_copy(formatter::normalize(file.text)))
      if (line.rfind("import ", 0) == 0 || line.rfind("from ", 0) == 0) ++imports_raw;
    for (const auto& line : split_lines_copy(detail::read_file(path)))
      if (line.rfind("import ", 0) == 0 || line.rfind("from ", 0) == 0) ++imports_kept;
  }
  CHECK(imports_kept < imports_raw);
  CHECK(imports_kept > 0);
}

TEST_CASE("training subcommands produce loadable artifacts") {
  const auto& w = workspace();
  const auto tok = tokenizer::Tokenizer::load(w.artifacts / "tok.bin");
  CHECK(tok.vocab.size() == 300);
  const std::string probe = "for i in range(10):\n";
  CHECK(tok.decode(tok.encode(probe)) == probe);

  const auto model = lm::NgramModel::load(w.artifacts / "lm.bin");
  CHECK(model.order() == 3);
  CHECK(model.vocab_size() == tok.vocab.size());
}

TEST_CASE("complete prints one deterministic JSON object") {
  const auto& w = workspace();
  const std::string snippet =
      "import os\n\ndef process_0(value):\n    total = 0\n    for i";
  const auto snippet_path = w.root / "snippet.py";
  detail::write_file(snippet_path, snippet);
  const auto caret = std::to_string(detail::count_codepoints(snippet));

  const auto first = cli({"complete", "--config", w.config.string(), "--file",
                          snippet_path.string(), "--caret", caret});
  REQUIRE(first.exit_code == 0);
  auto parsed = json::parse(first.out);
  CHECK(parsed.contains("suggestion"));
  CHECK(parsed.contains("score"));
  CHECK(parsed.at("latency_ms").is_number());
  CHECK(parsed.at("cache_hit") == false);
  const std::string stop = parsed.at("stop_reason");
  CHECK((stop == "ratio_cutoff" || stop == "max_iterations" || stop == "all_terminated"));
  if (!parsed.at("suggestion").is_null()) {
    CHECK(parsed.at("suggestion").get<std::string>().find('\n') == std::string::npos);
    CHECK(parsed.at("score").get<double>() < 0.0);
  }

  const auto second = cli({"complete", "--config", w.config.string(), "--file",
                           snippet_path.string(), "--caret", caret});
  REQUIRE(second.exit_code == 0);
  auto reparsed = json::parse(second.out);
  parsed.erase("latency_ms");
  reparsed.erase("latency_ms");
  CHECK(parsed == reparsed);
}

TEST_CASE("eval samples positions once and replays them from disk") {
  const auto& w = workspace();
  const auto positions_path = w.root / "positions.tsv";
  const auto report_path = w.root / "report.json";
  const auto records_path = w.root / "records.jsonl";

  const auto generate = cli({"eval", "--config", w.config.string(), "--corpus", w.raw.string(),
                             "--positions", positions_path.string(), "--report",
                             report_path.string(), "--records", records_path.string(),
                             "--generate-positions", "2", "--seed", "9"});
  REQUIRE(generate.exit_code == 0);

  const auto positions = eval::load_positions(positions_path);
  CHECK(!positions.empty());
  CHECK(positions.size() <= 2 * w.files.size());
  for (const auto& p : positions) CHECK(p.file_id < w.files.size());

  const auto records = eval::records_from_jsonl(detail::read_file(records_path));
  CHECK(records.size() == positions.size());

  const auto report = json::parse(detail::read_file(report_path));
  CHECK(report.at("positions_total") == positions.size());
  CHECK(report.at("latency_p50_ms").get<double>() >= 0.0);
  CHECK(json::parse(generate.out) == report);  // stdout mirrors the report file

  // Replaying the saved positions reproduces every judgment bit for bit.
  const auto records2_path = w.root / "records2.jsonl";
  const auto report2_path = w.root / "report2.json";
  const auto replay = cli({"eval", "--config", w.config.string(), "--corpus", w.raw.string(),
                           "--positions", positions_path.string(), "--report",
                           report2_path.string(), "--records", records2_path.string()});
  REQUIRE(replay.exit_code == 0);

  const auto replayed = eval::records_from_jsonl(detail::read_file(records2_path));
  REQUIRE(replayed.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CAPTURE(i);
    CHECK(replayed[i].file_id == records[i].file_id);
    CHECK(replayed[i].caret_offset == records[i].caret_offset);
    CHECK(replayed[i].shown == records[i].shown);
    CHECK(replayed[i].suggestion == records[i].suggestion);
    CHECK(replayed[i].truth == records[i].truth);
    CHECK(replayed[i].matched == records[i].matched);
    CHECK(replayed[i].perfect == records[i].perfect);
    CHECK(replayed[i].error == records[i].error);
  }
  const auto report2 = json::parse(detail::read_file(report2_path));
  CHECK(report2.at("matched_ratio") == report.at("matched_ratio"));
  CHECK(report2.at("perfect_lines") == report.at("perfect_lines"));
  CHECK(report2.at("suggestions_shown") == report.at("suggestions_shown"));
}

TEST_CASE("serve --stdio answers each request line in order") {
  const auto& w = workspace();
  json req1{{"id", 1}, {"path", "a.py"}, {"extension", "py"}, {"text", "x = "}, {"caret", 4}};
  json req2{{"id", 2}, {"path", "a.py"}, {"extension", "py"}, {"text", "x = "}, {"caret", 4}};
  const std::string input = req1.dump() + "\nnot json\n" + req2.dump() + "\n";

  const auto result =
      cli({"serve", "--config", w.config.string(), "--stdio"}, input);
  REQUIRE(result.exit_code == 0);
  const auto lines = split_lines_copy(result.out);
  REQUIRE(lines.size() == 3);
  CHECK(json::parse(lines[0]).at("id") == 1);
  CHECK(json::parse(lines[1]).at("error") == "parse");
  CHECK(json::parse(lines[2]).at("id") == 2);
  CHECK(json::parse(lines[2]).at("cache_hit") == true);  // one session per stream
}

TEST_CASE("failures exit nonzero with a typed error line") {
  const auto& w = workspace();

  const auto missing = cli({"prep", "--corpus", (w.root / "nowhere").string(), "--out",
                            (w.root / "never").string()});
  CHECK(missing.exit_code == 1);
  CHECK(missing.err.rfind("error: ", 0) == 0);

  const auto bad_config_path = w.root / "bad.conf";
  detail::write_file(bad_config_path, "bogus = 1\n");
  const auto bad_config = cli({"complete", "--config", bad_config_path.string(), "--file",
                               (w.root / "snippet.py").string(), "--caret", "0"});
  CHECK(bad_config.exit_code == 1);
  CHECK(bad_config.err.find("unknown config key 'bogus'") != std::string::npos);

  const auto both = cli({"serve", "--config", w.config.string(), "--tcp", "127.0.0.1:1",
                         "--stdio"});
  CHECK(both.exit_code == 1);
  CHECK(both.err.find("choose either") != std::string::npos);

  CHECK(cli({}).exit_code != 0);
  CHECK(cli({"prep", "--corpus", w.raw.string(), "--out", (w.root / "x").string(),
             "--split-ratios", "0.5", "0.5"})
            .exit_code != 0);
}
