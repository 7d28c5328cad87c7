#include "pixcon/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pixcon/errors.hpp"

namespace pixcon {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string str(v);
    const double d = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw InvalidParameter("config: '" + std::string(key) + "' expects a number, got '" +
                           std::string(v) + "'");
  }
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InvalidParameter("config: '" + std::string(key) + "' expects an integer, got '" +
                           std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidParameter("config: '" + std::string(key) + "' expects a boolean, got '" +
                         std::string(v) + "'");
}

std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
  std::vector<int> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_int<int>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw InvalidParameter("config: '" + std::string(key) + "' is empty");
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(OutputLoss v) {
  return v == OutputLoss::kL2 ? "l2" : "ce";
}

std::string_view to_string(FeatureLoss v) {
  switch (v) {
    case FeatureLoss::kNone: return "none";
    case FeatureLoss::kImageContrast: return "image-contrast";
    case FeatureLoss::kPixelConsist: return "pixel-consist";
    case FeatureLoss::kPixelContrast: return "pixel-contrast";
  }
  return "?";
}

OutputLoss parse_output_loss(std::string_view s) {
  if (s == "l2") return OutputLoss::kL2;
  if (s == "ce") return OutputLoss::kCrossEntropy;
  throw InvalidParameter("unknown output loss '" + std::string(s) + "' (expected l2|ce)");
}

FeatureLoss parse_feature_loss(std::string_view s) {
  for (auto v : {FeatureLoss::kNone, FeatureLoss::kImageContrast,
                 FeatureLoss::kPixelConsist, FeatureLoss::kPixelContrast}) {
    if (to_string(v) == s) return v;
  }
  throw InvalidParameter("unknown feature loss '" + std::string(s) +
                         "' (expected none|image-contrast|pixel-consist|pixel-contrast)");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "lambda1",       "lambda2",        "tau",
      "num_negatives", "sharpen_temperature", "strategy",
      "output_loss",   "feature_loss",   "stage_channels",
      "feature_stage", "projection_dim", "shared_projection",
      "delay_steps",   "total_steps",    "batch_labeled",
      "batch_unlabeled", "base_lr",      "weight_decay",
      "labeled_fraction", "eval_interval", "checkpoint_interval",
      "seed"};
  return keys;
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "lambda1") lambda_contrast = parse_double(key, value);
  else if (key == "lambda2") lambda_consistency = parse_double(key, value);
  else if (key == "tau") temperature = parse_double(key, value);
  else if (key == "num_negatives") num_negatives = parse_int<int>(key, value);
  else if (key == "sharpen_temperature") sharpen_temperature = parse_double(key, value);
  else if (key == "strategy") strategy = parse_strategy(value);
  else if (key == "output_loss") output_loss = parse_output_loss(value);
  else if (key == "feature_loss") feature_loss = parse_feature_loss(value);
  else if (key == "stage_channels") stage_channels = parse_int_list(key, value);
  else if (key == "feature_stage") feature_stage = parse_int<int>(key, value);
  else if (key == "projection_dim") projection_dim = parse_int<int>(key, value);
  else if (key == "shared_projection") shared_projection = parse_bool(key, value);
  else if (key == "delay_steps") delay_steps = parse_int<int>(key, value);
  else if (key == "total_steps") total_steps = parse_int<int>(key, value);
  else if (key == "batch_labeled") batch_labeled = parse_int<int>(key, value);
  else if (key == "batch_unlabeled") batch_unlabeled = parse_int<int>(key, value);
  else if (key == "base_lr") base_lr = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "labeled_fraction") labeled_fraction = parse_double(key, value);
  else if (key == "eval_interval") eval_interval = parse_int<int>(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_int<int>(key, value);
  else if (key == "seed") seed = parse_int<std::uint64_t>(key, value);
  else throw InvalidParameter("config: unknown key '" + std::string(key) + "'");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lambda1=" << format_double(lambda_contrast) << '\n'
     << "lambda2=" << format_double(lambda_consistency) << '\n'
     << "tau=" << format_double(temperature) << '\n'
     << "num_negatives=" << num_negatives << '\n'
     << "sharpen_temperature=" << format_double(sharpen_temperature) << '\n'
     << "strategy=" << to_string(strategy) << '\n'
     << "output_loss=" << to_string(output_loss) << '\n'
     << "feature_loss=" << to_string(feature_loss) << '\n'
     << "stage_channels=";
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    os << (i ? "," : "") << stage_channels[i];
  }
  os << '\n'
     << "feature_stage=" << feature_stage << '\n'
     << "projection_dim=" << projection_dim << '\n'
     << "shared_projection=" << (shared_projection ? 1 : 0) << '\n'
     << "delay_steps=" << delay_steps << '\n'
     << "total_steps=" << total_steps << '\n'
     << "batch_labeled=" << batch_labeled << '\n'
     << "batch_unlabeled=" << batch_unlabeled << '\n'
     << "base_lr=" << format_double(base_lr) << '\n'
     << "weight_decay=" << format_double(weight_decay) << '\n'
     << "labeled_fraction=" << format_double(labeled_fraction) << '\n'
     << "eval_interval=" << eval_interval << '\n'
     << "checkpoint_interval=" << checkpoint_interval << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

void TrainConfig::validate() const {
  if (!(lambda_contrast >= 0.0) || !(lambda_consistency >= 0.0)) {
    throw InvalidParameter("config: lambda1 and lambda2 must be >= 0");
  }
  if (!(temperature > 0.0)) throw InvalidParameter("config: tau must be > 0");
  if (!(sharpen_temperature > 0.0)) {
    throw InvalidParameter("config: sharpen_temperature must be > 0");
  }
  if (num_negatives < 0) throw InvalidParameter("config: num_negatives must be >= 0");
  if (total_steps < 0) throw InvalidParameter("config: total_steps must be >= 0");
  if (delay_steps < 0 || delay_steps > total_steps) {
    throw InvalidParameter("config: delay_steps must lie in [0, total_steps]");
  }
  if (batch_labeled < 1 || batch_unlabeled < 1) {
    throw InvalidParameter("config: batch sizes must be >= 1");
  }
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw InvalidParameter("config: base_lr and weight_decay must be >= 0");
  }
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw InvalidParameter("config: labeled_fraction must lie in (0, 1]");
  }
  if (feature_stage < 1 || feature_stage > static_cast<int>(stage_channels.size())) {
    throw InvalidParameter("config: feature_stage must lie in [1, stages]");
  }
  if (projection_dim < 1) throw InvalidParameter("config: projection_dim must be >= 1");
  if (eval_interval < 0 || checkpoint_interval < 0) {
    throw InvalidParameter("config: intervals must be >= 0");
  }
}

int TrainConfig::effective_eval_interval() const {
  if (eval_interval > 0) return eval_interval;
  return std::max(1, total_steps / 20);
}

TrainConfig parse_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("expected key=value", line_no);
    }
    try {
      base.set(trim(view.substr(0, eq)), view.substr(eq + 1));
    } catch (const InvalidParameter& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  return parse_config(in, std::move(base));
}

}  // namespace pixcon
