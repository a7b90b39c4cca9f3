#include "dfmsd/metrics_log.hpp"

#include <fmt/format.h>

#include <sstream>
#include <stdexcept>

namespace dfmsd {

namespace {

double get_double(const std::map<std::string, std::string> &kv, const char *key) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw std::invalid_argument(std::string("metrics record lacks ") + key);
  return std::stod(it->second);
}

} // namespace

std::string format_record(const MetricsRecord &r) {
  std::string line = fmt::format("step={} stage={} loss_total={:.17g} loss_gt={:.17g} loss_distill={:.17g} "
                                 "loss_me={:.17g} loss_recon={:.17g} loss_sfa={:.17g}",
                                 r.step, r.stage_index, r.loss_total, r.loss_gt, r.loss_distill, r.loss_me,
                                 r.loss_recon, r.loss_sfa);
  if (r.eval)
    line += fmt::format(" ap50={:.17g} mar={:.17g}", r.eval->ap50, r.eval->mar);
  return line;
}

std::map<std::string, std::string> parse_key_values(const std::string &line) {
  std::map<std::string, std::string> kv;
  std::istringstream in(line);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("malformed key=value token '" + token + "'");
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return kv;
}

bool is_event_line(const std::string &line) { return line.rfind("event=", 0) == 0; }

MetricsRecord parse_record(const std::string &line) {
  const auto kv = parse_key_values(line);
  MetricsRecord r;
  r.step = static_cast<int>(get_double(kv, "step"));
  r.stage_index = static_cast<int>(get_double(kv, "stage"));
  r.loss_total = get_double(kv, "loss_total");
  r.loss_gt = get_double(kv, "loss_gt");
  r.loss_distill = get_double(kv, "loss_distill");
  r.loss_me = get_double(kv, "loss_me");
  if (kv.count("loss_recon"))
    r.loss_recon = get_double(kv, "loss_recon");
  if (kv.count("loss_sfa"))
    r.loss_sfa = get_double(kv, "loss_sfa");
  if (kv.count("ap50"))
    r.eval = EvalMetrics{get_double(kv, "ap50"), get_double(kv, "mar")};
  return r;
}

MetricsLog::MetricsLog(const std::filesystem::path &path) : out_(path, std::ios::trunc) {
  if (!out_)
    throw std::runtime_error("cannot write metrics log " + path.string());
}

void MetricsLog::write(const std::string &line) {
  lines_.push_back(line);
  if (out_.is_open()) {
    out_ << line << '\n';
    out_.flush();
  }
}

void MetricsLog::record(const MetricsRecord &r) {
  records_.push_back(r);
  write(format_record(r));
}

void MetricsLog::event(const std::string &name, const std::map<std::string, std::string> &fields) {
  std::string line = "event=" + name;
  for (const auto &[k, v] : fields)
    line += " " + k + "=" + v;
  write(line);
}

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open metrics log " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && !is_event_line(line))
      out.push_back(parse_record(line));
  return out;
}

} // namespace dfmsd
