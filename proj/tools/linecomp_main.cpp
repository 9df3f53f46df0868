/**
 * Command line for the completion pipeline: corpus preparation, tokenizer
 * and language model training, one-shot completion, offline evaluation,
 * and the local completion service.
 */

#include <cstdint>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "linecomp/corpus.hpp"
#include "linecomp/engine.hpp"
#include "linecomp/eval.hpp"
#include "linecomp/formatter.hpp"
#include "linecomp/ngram.hpp"
#include "linecomp/server.hpp"
#include "linecomp/tokenizer.hpp"

namespace {

using namespace linecomp;

std::set<std::string> extension_set(const std::vector<std::string>& exts) {
  return {exts.begin(), exts.end()};
}

/// Stable per-file seed so preparation does not depend on listing order.
std::uint64_t file_seed(std::uint64_t base, const std::string& relative_path) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : relative_path) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return base ^ h;
}

const char* segment_dir(corpus::Split::Segment segment) {
  switch (segment) {
    case corpus::Split::Segment::train: return "train";
    case corpus::Split::Segment::validation: return "validation";
    case corpus::Split::Segment::test: return "test";
  }
  return "train";
}

/// Normalized, scope-encoded text prefixed with the extension/path header,
/// exactly the shape the engine feeds the model at inference time.
std::string model_input(const corpus::CorpusFile& file, const formatter::FormatterConfig& fmt) {
  const auto scoped = formatter::encode_scopes(formatter::normalize(file.text, fmt));
  std::string out;
  out += file.extension;
  out += kLangSep;
  out += file.relative_path;
  out += kMetaSep;
  out += scoped.text;
  return out;
}

int run_prep(const std::string& corpus_dir, const std::string& out_dir, double dropout,
             std::uint64_t seed, const std::vector<double>& ratios, const std::string& fork_map,
             std::uint64_t split_seed, const std::vector<std::string>& exts) {
  const auto ingested = corpus::ingest(corpus_dir, extension_set(exts));
  for (const auto& skipped : ingested.skipped_non_utf8)
    std::cerr << "skipped non-UTF-8 file: " << skipped << "\n";
  if (ingested.files.empty()) throw Error("corpus: no files ingested");

  corpus::SplitSpec spec;
  if (!ratios.empty()) {
    if (ratios.size() != 3) throw Error("corpus: --split-ratios needs three values");
    spec.ratios = {ratios[0], ratios[1], ratios[2]};
  }
  if (!fork_map.empty()) spec.fork_map = corpus::load_fork_map(fork_map);
  spec.seed = split_seed;
  const auto split = corpus::split_corpus(ingested.files, spec);

  const formatter::FormatterConfig fmt;
  std::size_t written = 0;
  for (const auto& file : ingested.files) {
    const auto segment = split.segment_of(spec.family_of(file.repo_id));
    std::string text = formatter::normalize(file.text, fmt);
    if (segment == corpus::Split::Segment::train)
      text = formatter::import_dropout(text, dropout, file_seed(seed, file.relative_path));
    const auto out_path =
        std::filesystem::path(out_dir) / segment_dir(segment) / file.relative_path;
    detail::write_file(out_path, text);
    ++written;
  }
  detail::write_file(std::filesystem::path(out_dir) / "split.tsv", split.to_text());
  std::cout << "prepared " << written << " files into " << out_dir << "\n";
  return 0;
}

int run_train_tokenizer(const std::string& corpus_dir, std::size_t vocab_size,
                        const std::string& out_file, const std::vector<std::string>& exts) {
  const auto ingested = corpus::ingest(corpus_dir, extension_set(exts));
  const formatter::FormatterConfig fmt;
  std::vector<std::string> texts;
  texts.reserve(ingested.files.size());
  for (const auto& file : ingested.files) texts.push_back(model_input(file, fmt));
  const auto tok = tokenizer::train(texts, tokenizer::TokenizerConfig{vocab_size});
  tok.save(out_file);
  std::cout << "trained tokenizer: " << tok.vocab.size() << " tokens ("
            << tok.merges.order.size() << " merges"
            << (tok.merges_exhausted ? ", merges exhausted" : "") << ") -> " << out_file << "\n";
  return 0;
}

int run_train_lm(const std::string& corpus_dir, const std::string& tokenizer_file,
                 std::size_t order, double backoff, const std::string& out_file,
                 const std::vector<std::string>& exts) {
  const auto tok = tokenizer::Tokenizer::load(tokenizer_file);
  const auto ingested = corpus::ingest(corpus_dir, extension_set(exts));
  const formatter::FormatterConfig fmt;
  std::vector<std::vector<TokenId>> sequences;
  sequences.reserve(ingested.files.size());
  for (const auto& file : ingested.files)
    sequences.push_back(tok.encode(model_input(file, fmt)));
  const auto model = lm::NgramModel::fit(sequences, order, tok.vocab.size(), backoff);
  model.save(out_file);
  std::cout << "trained order-" << order << " model over " << sequences.size() << " files -> "
            << out_file << "\n";
  return 0;
}

int run_complete(const std::string& config_file, const std::string& file, std::size_t caret) {
  const engine::Engine eng(engine::EngineConfig::from_file(config_file));
  engine::Session session(eng);
  engine::CompletionRequest request;
  request.path = file;
  request.extension = corpus::extension_of(file);
  request.text = detail::read_file(file);
  request.caret_offset = caret;
  const auto result = session.complete(request);
  nlohmann::json out{{"suggestion", nullptr},
                     {"score", nullptr},
                     {"latency_ms", result.latency_ms},
                     {"cache_hit", result.cache_hit},
                     {"stop_reason", generator::to_string(result.stop_reason)}};
  if (result.suggestion) {
    out["suggestion"] = *result.suggestion;
    out["score"] = result.score;
  }
  std::cout << out.dump() << "\n";
  return 0;
}

int run_eval(const std::string& config_file, const std::string& corpus_dir,
             const std::string& positions_file, const std::string& report_file,
             const std::string& records_file, std::size_t generate, std::uint64_t seed,
             const std::vector<std::string>& exts) {
  const engine::Engine eng(engine::EngineConfig::from_file(config_file));
  const auto ingested = corpus::ingest(corpus_dir, extension_set(exts));

  std::vector<eval::EvalPosition> positions;
  if (generate > 0) {
    const auto sampled = eval::sample_positions(ingested.files, generate, seed);
    for (std::size_t id : sampled.skipped_file_ids)
      std::cerr << "no eligible positions in " << ingested.files[id].relative_path << "\n";
    positions = sampled.positions;
    eval::save_positions(positions, positions_file);
  } else {
    positions = eval::load_positions(positions_file);
  }

  const auto run = eval::evaluate(ingested.files, positions, eval::session_adapter(eng));
  detail::write_file(report_file, eval::to_json(run.report).dump(2) + "\n");
  if (!records_file.empty())
    detail::write_file(records_file, eval::records_to_jsonl(run.records));
  std::cout << eval::to_json(run.report).dump(2) << "\n";
  return 0;
}

int run_serve(const std::string& config_file, const std::string& tcp, bool stdio) {
  const engine::Engine eng(engine::EngineConfig::from_file(config_file));
  if (!tcp.empty() && stdio) throw Error("server: choose either --tcp or --stdio");
  if (!tcp.empty()) {
    const auto colon = tcp.rfind(':');
    if (colon == std::string::npos) throw Error("server: --tcp needs HOST:PORT");
    const std::string host = tcp.substr(0, colon);
    const int port = std::stoi(tcp.substr(colon + 1));
    if (port < 0 || port > 65535) throw Error("server: port out of range");
    server::TcpServer srv(eng, host, static_cast<std::uint16_t>(port));
    std::cout << "listening on " << host << ":" << srv.port() << "\n" << std::flush;
    srv.run();
    return 0;
  }
  server::serve_stdio(eng, std::cin, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"full-line code completion pipeline"};
  app.require_subcommand(1);

  std::vector<std::string> exts{"py"};

  // prep
  auto* prep = app.add_subcommand("prep", "normalize a corpus and split it by repository family");
  std::string prep_corpus, prep_out, prep_fork_map;
  double prep_dropout = 0.5;
  std::uint64_t prep_seed = 0, prep_split_seed = 0;
  std::vector<double> prep_ratios;
  prep->add_option("--corpus", prep_corpus, "raw corpus directory")->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--dropout", prep_dropout, "import dropout probability for the train segment");
  prep->add_option("--seed", prep_seed, "dropout seed");
  prep->add_option("--split-ratios", prep_ratios, "train validation test ratios")->expected(3);
  prep->add_option("--fork-map", prep_fork_map, "TSV mapping repo id to family id");
  prep->add_option("--split-seed", prep_split_seed, "family shuffle seed");
  prep->add_option("--ext", exts, "file extensions to ingest");

  // train-tokenizer
  auto* ttok = app.add_subcommand("train-tokenizer", "train the character-pair tokenizer");
  std::string ttok_corpus, ttok_out;
  std::size_t ttok_vocab = 16384;
  ttok->add_option("--corpus", ttok_corpus, "prepared train directory")->required();
  ttok->add_option("--vocab-size", ttok_vocab, "target vocabulary size");
  ttok->add_option("--out", ttok_out, "tokenizer artifact path")->required();
  ttok->add_option("--ext", exts, "file extensions to ingest");

  // train-lm
  auto* tlm = app.add_subcommand("train-lm", "fit the n-gram language model");
  std::string tlm_corpus, tlm_tokenizer, tlm_out;
  std::size_t tlm_order = 3;
  double tlm_backoff = 0.4;
  tlm->add_option("--corpus", tlm_corpus, "prepared train directory")->required();
  tlm->add_option("--tokenizer", tlm_tokenizer, "tokenizer artifact")->required();
  tlm->add_option("--order", tlm_order, "n-gram order");
  tlm->add_option("--backoff", tlm_backoff, "backoff factor");
  tlm->add_option("--out", tlm_out, "model artifact path")->required();
  tlm->add_option("--ext", exts, "file extensions to ingest");

  // complete
  auto* comp = app.add_subcommand("complete", "complete one file at a caret offset");
  std::string comp_config, comp_file;
  std::size_t comp_caret = 0;
  comp->add_option("--config", comp_config, "engine config file")->required();
  comp->add_option("--file", comp_file, "source file")->required();
  comp->add_option("--caret", comp_caret, "caret offset in characters")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "run the offline evaluation");
  std::string evl_config, evl_corpus, evl_positions, evl_report, evl_records;
  std::size_t evl_generate = 0;
  std::uint64_t evl_seed = 0;
  evl->add_option("--config", evl_config, "engine config file")->required();
  evl->add_option("--corpus", evl_corpus, "prepared evaluation directory")->required();
  evl->add_option("--positions", evl_positions, "caret positions file")->required();
  evl->add_option("--report", evl_report, "report JSON output")->required();
  evl->add_option("--records", evl_records, "per-position JSONL output");
  evl->add_option("--generate-positions", evl_generate,
                  "sample this many positions per file and write them to --positions");
  evl->add_option("--seed", evl_seed, "sampling seed");
  evl->add_option("--ext", exts, "file extensions to ingest");

  // serve
  auto* srv = app.add_subcommand("serve", "run the completion service");
  std::string srv_config, srv_tcp;
  bool srv_stdio = false;
  srv->add_option("--config", srv_config, "engine config file")->required();
  srv->add_option("--tcp", srv_tcp, "listen on HOST:PORT");
  srv->add_flag("--stdio", srv_stdio, "serve on stdin/stdout (default)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prep->parsed())
      return run_prep(prep_corpus, prep_out, prep_dropout, prep_seed, prep_ratios, prep_fork_map,
                      prep_split_seed, exts);
    if (ttok->parsed()) return run_train_tokenizer(ttok_corpus, ttok_vocab, ttok_out, exts);
    if (tlm->parsed())
      return run_train_lm(tlm_corpus, tlm_tokenizer, tlm_order, tlm_backoff, tlm_out, exts);
    if (comp->parsed()) return run_complete(comp_config, comp_file, comp_caret);
    if (evl->parsed())
      return run_eval(evl_config, evl_corpus, evl_positions, evl_report, evl_records, evl_generate,
                      evl_seed, exts);
    if (srv->parsed()) return run_serve(srv_config, srv_tcp, srv_stdio);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
