#include "umrl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "umrl/detail/random.hpp"

namespace umrl {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShiftStream = 0x5417;

std::string fixed(double v, int digits)
{
    if (std::isinf(v) && v > 0) return "Inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double mean_of(const nn::Tensor& t) { return t.sum() / static_cast<double>(t.size()); }

double pooled_mean(const std::array<nn::Var, 3>& maps)
{
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& m : maps) {
        sum += m.value().sum();
        count += m.value().size();
    }
    return sum / static_cast<double>(count);
}

bool all_finite(const std::vector<nn::Var>& params)
{
    for (const auto& p : params) {
        for (double g : p.grad().values()) {
            if (!std::isfinite(g)) return false;
        }
    }
    return true;
}

fs::path write_dump(const TrainConfig& cfg, const StepLog& log, const RainyPair& pair)
{
    fs::path dir = cfg.dump_dir.empty() ? fs::temp_directory_path() / "umrl-abort" : cfg.dump_dir;
    dir /= "step-" + std::to_string(log.step);
    fs::create_directories(dir);
    write_png(dir / "rainy.png", pair.rainy, 16);
    write_png(dir / "clean.png", pair.clean, 16);
    nlohmann::ordered_json j;
    j["pair"] = pair.name;
    j["step"] = log.step;
    j["epoch"] = log.epoch;
    j["L_l"] = log.l1;
    j["L_c"] = log.log_conf;
    j["L_p"] = log.perceptual;
    j["total"] = log.total;
    j["lambda1"] = log.lambda1;
    j["lr"] = log.lr;
    std::ofstream(dir / "loss.json") << j.dump(2) << '\n';
    return dir;
}

std::unique_ptr<FeatureExtractor> make_extractor(const TrainConfig& cfg)
{
    if (!cfg.feature_weights.empty()) {
        return std::make_unique<ConvFeatureExtractor>(ConvFeatureExtractor::load(cfg.feature_weights));
    }
    return std::make_unique<ConvFeatureExtractor>(ConvFeatureExtractor::random(cfg.seed));
}

VarPyramid clean_pyramid(const Image& clean)
{
    return constant_pyramid(image_pyramid(clean));
}

std::string pad_right(const std::string& s, std::size_t width)
{
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

} // namespace

void TrainConfig::validate() const
{
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (steps_per_epoch < 0) throw std::invalid_argument("steps_per_epoch must be >= 0");
    if (crop < 0 || crop % 16 != 0) throw std::invalid_argument("crop must be 0 or a positive multiple of 16");
    if (lr_switch_epoch < 0) throw std::invalid_argument("lr_switch_epoch must be >= 0");
    for (double r : {lr_initial, lr_after_epoch10, lambda1_initial, lambda1_switched, adam_eps}) {
        if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("rates and lambda1 values must be positive");
    }
    if (!(lambda2 >= 0.0)) throw std::invalid_argument("lambda2 must be nonnegative");
    if (!(conf_switch_threshold > 0.0 && conf_switch_threshold <= 1.0)) {
        throw std::invalid_argument("conf_switch_threshold must lie in (0, 1]");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
}

double lr_schedule(int epoch, const TrainConfig& cfg)
{
    return epoch <= cfg.lr_switch_epoch ? cfg.lr_initial : cfg.lr_after_epoch10;
}

double lambda1_schedule(double mean_confidence, double current, const TrainConfig& cfg)
{
    if (current == cfg.lambda1_switched) return current;
    return mean_confidence > cfg.conf_switch_threshold ? cfg.lambda1_switched : current;
}

Adam::Adam(std::vector<nn::Var> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto& p : params_) {
        m_.push_back(nn::Tensor::zeros_like(p.value()));
        v_.push_back(nn::Tensor::zeros_like(p.value()));
    }
}

void Adam::step(double lr)
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        nn::Var& p = params_[k];
        const nn::Tensor& g = p.mutable_grad();
        nn::Tensor& value = p.mutable_value();
        nn::Tensor& m = m_[k];
        nn::Tensor& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

void Adam::zero_grad()
{
    for (auto& p : params_) p.zero_grad();
}

std::string train_log_line(const StepLog& s)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", s.step, s.epoch, s.l1, s.log_conf,
                  s.perceptual, s.total, s.mean_conf, s.lambda1, s.lr);
    return buf;
}

TrainResult train(const std::vector<RainyPair>& dataset, const TrainConfig& cfg, const StepCallback& on_step)
{
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
    for (const auto& pair : dataset) {
        require_model_size(pair.rainy);
        if (!pair.rainy.same_shape(pair.clean)) throw std::invalid_argument("pair " + pair.name + " has mismatched shapes");
        if (cfg.crop > pair.rainy.height() || cfg.crop > pair.rainy.width()) {
            throw std::invalid_argument("crop " + std::to_string(cfg.crop) + " exceeds pair " + pair.name);
        }
    }

    UmrlWeights w = UmrlWeights::create(cfg.seed);
    const auto extractor = make_extractor(cfg);
    std::vector<nn::Var> params;
    for (auto& [name, p] : w.parameters()) params.push_back(p);
    Adam adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    const long batches_per_pass = (static_cast<long>(dataset.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const long steps_per_epoch = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : batches_per_pass;
    const double inv_batch = 1.0 / cfg.batch_size;

    ScheduleState schedule;
    schedule.lambda1 = cfg.lambda1_initial;
    TrainResult result;
    long sample = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        for (long s = 0; s < steps_per_epoch; ++s) {
            StepLog log;
            log.step = schedule.step + 1;
            log.epoch = epoch;
            log.lr = lr;
            adam.zero_grad();
            for (int b = 0; b < cfg.batch_size; ++b, ++sample) {
                const RainyPair& source = dataset[static_cast<std::size_t>(sample) % dataset.size()];
                RainyPair pair = cfg.augment
                                     ? random_shift_pair(source, detail::mix_seed(cfg.seed ^ kShiftStream, sample))
                                     : source;
                if (cfg.crop > 0) {
                    pair.rainy = umrl::crop(pair.rainy, cfg.crop, cfg.crop);
                    pair.clean = umrl::crop(pair.clean, cfg.crop, cfg.crop);
                    pair.residual.reset();
                }

                const UmrlGraph g = umrl_forward_graph(pair.rainy, w, cfg.variant, Mode::Train);
                const double mean_conf = pooled_mean(g.confidence);
                if (cfg.variant == Variant::UMRL) {
                    schedule.lambda1 = lambda1_schedule(mean_conf, schedule.lambda1, cfg);
                    schedule.lambda1_latched = schedule.lambda1 == cfg.lambda1_switched;
                }
                const LossTerms terms = training_objective(g, clean_pyramid(pair.clean), *extractor,
                                                           LossWeights{schedule.lambda1, cfg.lambda2}, cfg.variant);

                log.l1 += terms.l1.item() * inv_batch;
                log.log_conf += terms.log_conf.item() * inv_batch;
                log.perceptual += terms.perceptual.item() * inv_batch;
                log.total += terms.total.item() * inv_batch;
                log.mean_conf += mean_conf * inv_batch;
                log.mean_conf_x1 += mean_of(g.confidence[0].value()) * inv_batch;
                log.mean_conf_x4 += mean_of(g.confidence[2].value()) * inv_batch;
                log.lambda1 = schedule.lambda1;

                if (!std::isfinite(terms.total.item())) {
                    const fs::path dump = write_dump(cfg, log, pair);
                    throw TrainingAborted("non-finite loss at step " + std::to_string(log.step) + " (pair " + pair.name +
                                              "), batch dumped to " + dump.string(),
                                          dump);
                }
                nn::backward(cfg.batch_size == 1 ? terms.total : nn::scale(terms.total, inv_batch));
            }
            if (!all_finite(params)) {
                const fs::path dump = write_dump(cfg, log, dataset[static_cast<std::size_t>(sample - 1) % dataset.size()]);
                throw TrainingAborted("non-finite gradient at step " + std::to_string(log.step) + ", batch dumped to " +
                                          dump.string(),
                                      dump);
            }
            adam.step(lr);
            schedule.step = log.step;
            schedule.epoch = epoch;
            result.history.push_back(log);
            if (on_step) on_step(log);
        }
    }
    result.checkpoint = Checkpoint::from_weights(w, cfg.variant, schedule);
    return result;
}

std::string format_cell(double psnr_db, double ssim_value) { return format_psnr(psnr_db) + "|" + fixed(ssim_value, 3); }

EvalReport EvalReport::from_rows(std::vector<EvalRow> rows)
{
    EvalReport r;
    r.rows = std::move(rows);
    if (r.rows.empty()) return r;
    double ps = 0.0;
    double ss = 0.0;
    for (const auto& row : r.rows) {
        ps += row.psnr;
        ss += row.ssim;
    }
    r.mean_psnr = ps / static_cast<double>(r.rows.size());
    r.mean_ssim = ss / static_cast<double>(r.rows.size());
    return r;
}

std::string EvalReport::render_text() const
{
    std::size_t width = std::string("mean").size();
    for (const auto& row : rows) width = std::max(width, row.name.size());
    std::ostringstream out;
    out << pad_right("image", width) << "  PSNR|SSIM\n";
    for (const auto& row : rows) out << pad_right(row.name, width) << "  " << format_cell(row.psnr, row.ssim) << '\n';
    out << pad_right("mean", width) << "  " << format_cell(mean_psnr, mean_ssim) << '\n';
    return out.str();
}

std::string EvalReport::render_csv() const
{
    std::ostringstream out;
    out << "image,psnr,ssim\n";
    for (const auto& row : rows) out << row.name << ',' << fixed(row.psnr, 6) << ',' << fixed(row.ssim, 6) << '\n';
    out << "mean," << fixed(mean_psnr, 6) << ',' << fixed(mean_ssim, 6) << '\n';
    return out.str();
}

EvalReport evaluate_images(const std::vector<std::string>& names, const std::vector<Image>& predicted,
                           const std::vector<Image>& reference)
{
    if (names.size() != predicted.size() || names.size() != reference.size()) {
        throw std::invalid_argument("evaluate_images: list lengths differ");
    }
    std::vector<EvalRow> rows;
    for (std::size_t i = 0; i < names.size(); ++i) {
        rows.push_back({names[i], psnr(predicted[i], reference[i]), ssim(predicted[i], reference[i])});
    }
    return EvalReport::from_rows(std::move(rows));
}

EvalReport evaluate_restorer(const Restorer& restorer, const std::vector<RainyPair>& dataset, const EvalOptions& opts)
{
    std::vector<std::string> names;
    std::vector<Image> predicted;
    std::vector<Image> reference;
    for (const auto& pair : dataset) {
        Image out = opts.cycle_spin
                        ? cycle_spin_restore(restorer, pair.rainy,
                                             make_shift_grid(pair.rainy.height(), pair.rainy.width(), opts.step),
                                             opts.workers)
                        : restorer(pair.rainy);
        names.push_back(pair.name);
        predicted.push_back(std::move(out));
        reference.push_back(pair.clean);
    }
    return evaluate_images(names, predicted, reference);
}

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<RainyPair>& dataset, const EvalOptions& opts)
{
    const UmrlWeights w = ckpt.to_weights();
    const Variant variant = ckpt.variant;
    return evaluate_restorer([&](const Image& y) { return derain(y, w, variant); }, dataset, opts);
}

std::string AblationResult::render_text() const
{
    std::size_t width = std::string("Method").size();
    for (const auto& row : rows) width = std::max(width, row.label.size());
    std::ostringstream out;
    out << pad_right("Method", width) << "  " << pad_right("Plain", 14) << "  Cycle spinning\n";
    for (const auto& row : rows) {
        out << pad_right(row.label, width) << "  " << pad_right(format_cell(row.plain.mean_psnr, row.plain.mean_ssim), 14)
            << "  " << format_cell(row.cycle_spun.mean_psnr, row.cycle_spun.mean_ssim) << '\n';
    }
    return out.str();
}

std::string AblationResult::render_csv() const
{
    std::ostringstream out;
    out << "method,psnr,ssim,psnr_cycle_spin,ssim_cycle_spin\n";
    for (const auto& row : rows) {
        out << row.label << ',' << fixed(row.plain.mean_psnr, 6) << ',' << fixed(row.plain.mean_ssim, 6) << ','
            << fixed(row.cycle_spun.mean_psnr, 6) << ',' << fixed(row.cycle_spun.mean_ssim, 6) << '\n';
    }
    return out.str();
}

bool AblationResult::ordering_holds() const
{
    auto find = [this](const std::string& label) {
        for (const auto& row : rows) {
            if (row.label == label) return row.plain.mean_psnr;
        }
        throw std::logic_error("ablation lacks row " + label);
    };
    return find("UMRL") >= find("BN+RN") && find("BN+RN") >= find("BN");
}

double AblationResult::worst_cycle_spin_drop() const
{
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) worst = std::max(worst, row.plain.mean_psnr - row.cycle_spun.mean_psnr);
    return worst;
}

AblationResult ablate(const std::vector<RainyPair>& train_set, const std::vector<RainyPair>& test_set,
                      const TrainConfig& cfg, const AblationOptions& opts, const StepCallback& on_step)
{
    if (test_set.empty()) throw std::invalid_argument("ablation test set is empty");
    AblationResult result;
    const EvalOptions plain{false, opts.cycle_step, opts.workers};
    const EvalOptions spun{true, opts.cycle_step, opts.workers};

    const Restorer identity = [](const Image& y) { return y; };
    result.rows.push_back({"Rainy", evaluate_restorer(identity, test_set, plain),
                           evaluate_restorer(identity, test_set, spun)});
    for (Variant v : {Variant::BN, Variant::BN_RN, Variant::UMRL}) {
        TrainConfig run = cfg;
        run.variant = v;
        TrainResult trained = train(train_set, run, on_step);
        result.rows.push_back(
            {to_string(v), evaluate(trained.checkpoint, test_set, plain), evaluate(trained.checkpoint, test_set, spun)});
        result.runs.push_back(std::move(trained));
    }
    return result;
}

} // namespace umrl
