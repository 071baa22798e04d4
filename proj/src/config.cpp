#include "svc/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace svc {

void ExperimentConfig::validate() const {
  corpus.validate();
  if (encoder.hidden_dim % encoder.num_heads != 0)
    throw std::invalid_argument("encoder: hidden_dim must be divisible by num_heads");
  if (encoder.delay_steps < 0)
    throw std::invalid_argument("encoder: delay_steps must be >= 0");
  if (encoder.delay_steps % 2 != 0)
    throw std::invalid_argument(
        "encoder: delay_steps must be a multiple of the 2:1 frame-rate ratio");
  if (connector.residual_dim < 0)
    throw std::invalid_argument("connector: residual_dim must be >= 0");
  if (connector.unit_dim != backbone.lm_hidden)
    throw std::invalid_argument(
        "connector: unit_dim must equal backbone lm_hidden (embeddings are "
        "consumed directly by the backbone)");
  if (backbone.lm_hidden % backbone.lm_heads != 0)
    throw std::invalid_argument("backbone: lm_hidden must be divisible by lm_heads");
  if (backbone.interleave_ratio != 2)
    throw std::invalid_argument(
        "backbone: only interleave_ratio=2 is supported (20 ms acoustic vs "
        "40 ms semantic frames)");
  if (backbone.foresight_horizon < 1)
    throw std::invalid_argument("backbone: foresight_horizon must be >= 1");
  if (backbone.mask_prob < 0.0 || backbone.mask_prob > 1.0)
    throw std::invalid_argument("backbone: mask_prob must be in [0, 1]");
  if (backbone.mask_span_frac < 0.0 || backbone.mask_span_frac > 1.0)
    throw std::invalid_argument("backbone: mask_span_frac must be in [0, 1]");
  if (lora.rank < 1) throw std::invalid_argument("lora: rank must be >= 1");
  if (train.self_refine_prob < 0.0 || train.self_refine_prob > 1.0)
    throw std::invalid_argument("train: self_refine_prob must be in [0, 1]");
  if (train.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (train.min_prompt_frames < 1 || train.min_source_frames < 1)
    throw std::invalid_argument("train: prompt/source minimum frames must be >= 1");
  if (train.min_prompt_frames + train.min_source_frames > corpus.min_frames)
    throw std::invalid_argument(
        "train: min_prompt_frames + min_source_frames exceeds corpus min_frames");
  if (stream.prompt_frames < 1)
    throw std::invalid_argument("stream: prompt_frames must be >= 1");
  if (stream.rtf_codec < 0.0)
    throw std::invalid_argument("stream: rtf_codec must be >= 0");
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << "[corpus]\n"
     << "seed = " << corpus.seed << "\n"
     << "num_speakers = " << corpus.num_speakers << "\n"
     << "train_speakers = " << corpus.train_speakers << "\n"
     << "num_utterances = " << corpus.num_utterances << "\n"
     << "min_frames = " << corpus.min_frames << "\n"
     << "max_frames = " << corpus.max_frames << "\n"
     << "semantic_vocab = " << corpus.semantic_vocab << "\n"
     << "codec_vocab = " << corpus.codec_vocab << "\n"
     << "num_quantizers = " << corpus.num_quantizers << "\n"
     << "d_sem = " << corpus.d_sem << "\n"
     << "noise_sigma = " << fmt(corpus.noise_sigma) << "\n"
     << "[encoder]\n"
     << "num_layers = " << encoder.num_layers << "\n"
     << "num_heads = " << encoder.num_heads << "\n"
     << "hidden_dim = " << encoder.hidden_dim << "\n"
     << "intermediate_dim = " << encoder.intermediate_dim << "\n"
     << "delay_steps = " << encoder.delay_steps << "\n"
     << "max_positions = " << encoder.max_positions << "\n"
     << "[connector]\n"
     << "unit_dim = " << connector.unit_dim << "\n"
     << "residual_dim = " << connector.residual_dim << "\n"
     << "reuse_backbone_table = " << (connector.reuse_backbone_table ? 1 : 0) << "\n"
     << "[backbone]\n"
     << "lm_layers = " << backbone.lm_layers << "\n"
     << "lm_hidden = " << backbone.lm_hidden << "\n"
     << "lm_heads = " << backbone.lm_heads << "\n"
     << "interleave_ratio = " << backbone.interleave_ratio << "\n"
     << "foresight_horizon = " << backbone.foresight_horizon << "\n"
     << "mask_prob = " << fmt(backbone.mask_prob) << "\n"
     << "mask_span_frac = " << fmt(backbone.mask_span_frac) << "\n"
     << "max_positions = " << backbone.max_positions << "\n"
     << "[lora]\n"
     << "rank = " << lora.rank << "\n"
     << "alpha = " << fmt(lora.alpha) << "\n"
     << "[train]\n"
     << "seed = " << train.seed << "\n"
     << "pretrain_steps = " << train.pretrain_steps << "\n"
     << "finetune_steps = " << train.finetune_steps << "\n"
     << "dual_encoder_steps = " << train.dual_encoder_steps << "\n"
     << "dual_finetune_steps = " << train.dual_finetune_steps << "\n"
     << "batch_size = " << train.batch_size << "\n"
     << "lr_pretrain = " << fmt(train.lr_pretrain) << "\n"
     << "lr_finetune = " << fmt(train.lr_finetune) << "\n"
     << "decay_rate = " << fmt(train.decay_rate) << "\n"
     << "decay_period_pretrain = " << train.decay_period_pretrain << "\n"
     << "decay_period_finetune = " << train.decay_period_finetune << "\n"
     << "weight_decay = " << fmt(train.weight_decay) << "\n"
     << "self_refine_prob = " << fmt(train.self_refine_prob) << "\n"
     << "refine_pairs = " << train.refine_pairs << "\n"
     << "min_prompt_frames = " << train.min_prompt_frames << "\n"
     << "min_source_frames = " << train.min_source_frames << "\n"
     << "eval_pairs = " << train.eval_pairs << "\n"
     << "[stream]\n"
     << "prompt_frames = " << stream.prompt_frames << "\n"
     << "rtf_codec = " << fmt(stream.rtf_codec) << "\n";
  return os.str();
}

std::uint64_t ExperimentConfig::group_fingerprint(const std::string& group) const {
  std::ostringstream os;
  // Token-shaping corpus dims; data knobs (seed, counts) do not shape tensors.
  os << "arch:" << corpus.semantic_vocab << "," << corpus.codec_vocab << ","
     << corpus.num_quantizers << "," << corpus.d_sem << ";";
  auto enc = [&] {
    os << "enc:" << encoder.num_layers << "," << encoder.num_heads << ","
       << encoder.hidden_dim << "," << encoder.intermediate_dim << ","
       << encoder.delay_steps << "," << encoder.max_positions << ";";
  };
  auto bb = [&] {
    os << "bb:" << backbone.lm_layers << "," << backbone.lm_hidden << ","
       << backbone.lm_heads << "," << backbone.interleave_ratio << ","
       << backbone.foresight_horizon << "," << backbone.max_positions << ";";
  };
  auto lora_part = [&] { os << "lora:" << lora.rank << "," << fmt(lora.alpha) << ";"; };
  if (group == "backbone") {
    bb();
  } else if (group == "encoder" || group == "linear" || group == "linear2") {
    enc();
  } else if (group == "connector" || group == "connector2") {
    os << "conn:" << connector.unit_dim << "," << connector.residual_dim << ","
       << (connector.reuse_backbone_table ? 1 : 0) << ";";
    os << "encdim:" << encoder.hidden_dim << ";";
  } else if (group == "backbone-lora" || group == "backbone-lora2") {
    bb();
    lora_part();
  } else if (group == "encoder-lora") {
    enc();
    lora_part();
  } else {
    throw std::invalid_argument("unknown checkpoint group: " + group);
  }
  return fnv1a(os.str());
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& v, int line) {
  try {
    size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) fail(line, "trailing characters in integer value '" + v + "'");
    return x;
  } catch (const std::invalid_argument&) {
    fail(line, "expected integer, got '" + v + "'");
  } catch (const std::out_of_range&) {
    fail(line, "integer out of range: '" + v + "'");
  }
}

double parse_double(const std::string& v, int line) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) fail(line, "trailing characters in numeric value '" + v + "'");
    return x;
  } catch (const std::invalid_argument&) {
    fail(line, "expected number, got '" + v + "'");
  } catch (const std::out_of_range&) {
    fail(line, "number out of range: '" + v + "'");
  }
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "expected boolean (true/false), got '" + v + "'");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = raw;
    const size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "malformed section header");
      section = s.substr(1, s.size() - 2);
      if (section != "corpus" && section != "encoder" && section != "connector" &&
          section != "backbone" && section != "lora" && section != "train" &&
          section != "stream")
        fail(line, "unknown section [" + section + "]");
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (section.empty()) fail(line, "key '" + key + "' outside any section");
    bool known = true;
    if (section == "corpus") {
      if (key == "seed") cfg.corpus.seed = static_cast<std::uint64_t>(parse_int(val, line));
      else if (key == "num_speakers") cfg.corpus.num_speakers = (int)parse_int(val, line);
      else if (key == "train_speakers") cfg.corpus.train_speakers = (int)parse_int(val, line);
      else if (key == "num_utterances") cfg.corpus.num_utterances = (int)parse_int(val, line);
      else if (key == "min_frames") cfg.corpus.min_frames = (int)parse_int(val, line);
      else if (key == "max_frames") cfg.corpus.max_frames = (int)parse_int(val, line);
      else if (key == "semantic_vocab") cfg.corpus.semantic_vocab = (int)parse_int(val, line);
      else if (key == "codec_vocab") cfg.corpus.codec_vocab = (int)parse_int(val, line);
      else if (key == "num_quantizers") cfg.corpus.num_quantizers = (int)parse_int(val, line);
      else if (key == "d_sem") cfg.corpus.d_sem = (int)parse_int(val, line);
      else if (key == "noise_sigma") cfg.corpus.noise_sigma = parse_double(val, line);
      else known = false;
    } else if (section == "encoder") {
      if (key == "num_layers") cfg.encoder.num_layers = (int)parse_int(val, line);
      else if (key == "num_heads") cfg.encoder.num_heads = (int)parse_int(val, line);
      else if (key == "hidden_dim") cfg.encoder.hidden_dim = (int)parse_int(val, line);
      else if (key == "intermediate_dim") cfg.encoder.intermediate_dim = (int)parse_int(val, line);
      else if (key == "delay_steps") cfg.encoder.delay_steps = (int)parse_int(val, line);
      else if (key == "max_positions") cfg.encoder.max_positions = (int)parse_int(val, line);
      else known = false;
    } else if (section == "connector") {
      if (key == "unit_dim") cfg.connector.unit_dim = (int)parse_int(val, line);
      else if (key == "residual_dim") cfg.connector.residual_dim = (int)parse_int(val, line);
      else if (key == "reuse_backbone_table") cfg.connector.reuse_backbone_table = parse_bool(val, line);
      else known = false;
    } else if (section == "backbone") {
      if (key == "lm_layers") cfg.backbone.lm_layers = (int)parse_int(val, line);
      else if (key == "lm_hidden") cfg.backbone.lm_hidden = (int)parse_int(val, line);
      else if (key == "lm_heads") cfg.backbone.lm_heads = (int)parse_int(val, line);
      else if (key == "interleave_ratio") cfg.backbone.interleave_ratio = (int)parse_int(val, line);
      else if (key == "foresight_horizon") cfg.backbone.foresight_horizon = (int)parse_int(val, line);
      else if (key == "mask_prob") cfg.backbone.mask_prob = parse_double(val, line);
      else if (key == "mask_span_frac") cfg.backbone.mask_span_frac = parse_double(val, line);
      else if (key == "max_positions") cfg.backbone.max_positions = (int)parse_int(val, line);
      else known = false;
    } else if (section == "lora") {
      if (key == "rank") cfg.lora.rank = (int)parse_int(val, line);
      else if (key == "alpha") cfg.lora.alpha = parse_double(val, line);
      else known = false;
    } else if (section == "train") {
      if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(parse_int(val, line));
      else if (key == "pretrain_steps") cfg.train.pretrain_steps = (int)parse_int(val, line);
      else if (key == "finetune_steps") cfg.train.finetune_steps = (int)parse_int(val, line);
      else if (key == "dual_encoder_steps") cfg.train.dual_encoder_steps = (int)parse_int(val, line);
      else if (key == "dual_finetune_steps") cfg.train.dual_finetune_steps = (int)parse_int(val, line);
      else if (key == "batch_size") cfg.train.batch_size = (int)parse_int(val, line);
      else if (key == "lr_pretrain") cfg.train.lr_pretrain = parse_double(val, line);
      else if (key == "lr_finetune") cfg.train.lr_finetune = parse_double(val, line);
      else if (key == "decay_rate") cfg.train.decay_rate = parse_double(val, line);
      else if (key == "decay_period_pretrain") cfg.train.decay_period_pretrain = (int)parse_int(val, line);
      else if (key == "decay_period_finetune") cfg.train.decay_period_finetune = (int)parse_int(val, line);
      else if (key == "weight_decay") cfg.train.weight_decay = parse_double(val, line);
      else if (key == "self_refine_prob") cfg.train.self_refine_prob = parse_double(val, line);
      else if (key == "refine_pairs") cfg.train.refine_pairs = (int)parse_int(val, line);
      else if (key == "min_prompt_frames") cfg.train.min_prompt_frames = (int)parse_int(val, line);
      else if (key == "min_source_frames") cfg.train.min_source_frames = (int)parse_int(val, line);
      else if (key == "eval_pairs") cfg.train.eval_pairs = (int)parse_int(val, line);
      else known = false;
    } else if (section == "stream") {
      if (key == "prompt_frames") cfg.stream.prompt_frames = (int)parse_int(val, line);
      else if (key == "rtf_codec") cfg.stream.rtf_codec = parse_double(val, line);
      else known = false;
    }
    if (!known) fail(line, "unknown key '" + key + "' in section [" + section + "]");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string default_config_text() {
  return R"(# Toy-scale experiment configuration.
# Values marked "full-scale reference" are the production-scale settings the
# toy defaults are scaled down from; both are valid, the smaller run in
# minutes on a desktop CPU.

[corpus]
seed = 1234
num_speakers = 24
train_speakers = 20
num_utterances = 360
min_frames = 12            # semantic frames (40 ms each)
max_frames = 20
semantic_vocab = 32
codec_vocab = 64           # full-scale reference: 1024
num_quantizers = 4         # full-scale reference: 4
d_sem = 32
noise_sigma = 0.05

[encoder]
num_layers = 2             # full-scale reference: 3
num_heads = 4              # full-scale reference: 8
hidden_dim = 64            # full-scale reference: 1024
intermediate_dim = 128     # full-scale reference: 4096
delay_steps = 4            # 20 ms acoustic frames; 4 -> 80 ms lookahead
max_positions = 512

[connector]
unit_dim = 64              # full-scale reference: 1024
residual_dim = 16          # full-scale reference: 16; 0 disables the path
reuse_backbone_table = true

[backbone]
lm_layers = 3              # full-scale reference: 6
lm_hidden = 64
lm_heads = 4
interleave_ratio = 2
foresight_horizon = 2
mask_prob = 0.5
mask_span_frac = 0.3
max_positions = 512

[lora]
rank = 8                   # full-scale reference: 32
alpha = 1                  # full-scale reference: 1

[train]
seed = 42
pretrain_steps = 2000      # full-scale reference: 500k
finetune_steps = 500       # full-scale reference: 100k
dual_encoder_steps = 600
dual_finetune_steps = 400
batch_size = 16
lr_pretrain = 5e-4         # full-scale reference: 5e-4
lr_finetune = 4e-4         # full-scale reference: 4e-4
decay_rate = 0.98
decay_period_pretrain = 50
decay_period_finetune = 50 # full-scale reference: 10k of 100k steps
weight_decay = 0.01
self_refine_prob = 0.5
refine_pairs = 150
min_prompt_frames = 4
min_source_frames = 4
eval_pairs = 100           # full-scale reference: 600 testing pairs

[stream]
prompt_frames = 8          # semantic frames; full-scale reference: 3 s prompt
rtf_codec = 0.004          # injected codec real-time factor
)";
}

}  // namespace svc
