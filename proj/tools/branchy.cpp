// branchy: train / eval / report / synth driver for early-exit intent
// classification models.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "branchy/branchy.hpp"

namespace {

using namespace branchy;

int usage() {
    std::cerr <<
        "usage:\n"
        "  branchy train  --config FILE --out MODEL [--key value ...]\n"
        "  branchy eval   --model MODEL --data TSV --out REPORT\n"
        "  branchy report REPORT... --out-dir DIR\n"
        "  branchy synth  --config FILE --out TSV [--key value ...]\n"
        "\n"
        "train/synth accept any config key as a --key value override;\n"
        "--seed is mandatory for train and synth.\n";
    return 1;
}

struct Args {
    std::string config_path;
    std::string out;
    std::string model_path;
    std::string data_path;
    std::string out_dir;
    std::vector<std::string> positional;
    std::vector<std::pair<std::string, std::string>> overrides;
};

Args parse_args(int argc, char** argv, int from) {
    Args a;
    for (int i = from; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0) {
            a.positional.push_back(arg);
            continue;
        }
        std::string key = arg.substr(2);
        if (i + 1 >= argc) throw ConfigError("missing value for --" + key);
        std::string value = argv[++i];
        if (key == "config") a.config_path = value;
        else if (key == "out") a.out = value;
        else if (key == "model") a.model_path = value;
        else if (key == "data") a.data_path = value;
        else if (key == "out-dir") a.out_dir = value;
        else a.overrides.emplace_back(key, value);
    }
    return a;
}

RunConfig resolve_config(const Args& a) {
    RunConfig c;
    if (!a.config_path.empty()) load_config_file(c, a.config_path);
    for (const auto& [k, v] : a.overrides) config_set(c, k, v);
    return c;
}

int cmd_train(const Args& a) {
    if (a.out.empty()) throw ConfigError("train: --out MODEL is required");
    RunConfig cfg = resolve_config(a);
    if (!a.data_path.empty()) cfg.data = a.data_path;
    std::uint64_t seed = cfg.require_seed();

    Dataset train, dev;
    if (!cfg.train_data.empty()) {
        if (cfg.dev_data.empty())
            throw ConfigError("train: dev_data is required with train_data");
        train = load_tsv(cfg.train_data, nullptr, nullptr, cfg.min_count, cfg.max_len);
        dev = load_tsv(cfg.dev_data, &train.vocab, &train.label_names, 1, cfg.max_len);
    } else if (!cfg.data.empty()) {
        Dataset full = load_tsv(cfg.data, nullptr, nullptr, cfg.min_count, cfg.max_len);
        auto parts = split(full, cfg.train_frac, cfg.dev_frac, cfg.test_frac, seed);
        train = std::move(parts[0]);
        dev = std::move(parts[1]);
    } else {
        throw ConfigError("train: set data= or train_data=/dev_data=");
    }
    if (train.skipped)
        std::cerr << "warning: skipped " << train.skipped
                  << " empty-token utterances during ingestion\n";

    ArchSpec spec;
    spec.kind = cfg.kind();
    spec.vocab_size = train.vocab.size();
    spec.embedding_dim = cfg.embedding_dim;
    spec.hidden_sizes = cfg.hidden_sizes;
    spec.n_classes = train.n_classes();
    spec.r_l = cfg.r_l;
    spec.r_u = cfg.r_u;
    spec.alpha_mode = cfg.alpha();
    BranchyModel model = init_parameters(spec, seed);

    if (!cfg.embeddings.empty()) {
        std::size_t covered = load_embeddings(cfg.embeddings, train.vocab, model.embedding);
        std::cout << "embeddings: covered " << covered << " of "
                  << train.vocab.size() - 1 << " vocabulary tokens\n";
    }

    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.seed = seed;
    auto log = train_branchy(model, train, dev, tc);
    for (const auto& em : log)
        std::cout << "epoch " << em.epoch << " train_loss " << em.train_loss
                  << " dev_accuracy " << em.dev_accuracy << '\n';

    const Dataset& calib = cfg.calibration_split == "dev" ? dev : train;
    model.thresholds = calibrate_thresholds(model, calib);

    ModelBundle bundle{std::move(model), train.vocab, train.label_names,
                       config_echo(cfg)};
    save_model(bundle, a.out);
    std::cout << "model written to " << a.out << '\n';
    return 0;
}

int cmd_eval(const Args& a) {
    if (a.model_path.empty() || a.data_path.empty() || a.out.empty())
        throw ConfigError("eval: --model, --data and --out are required");
    ModelBundle bundle = load_model(a.model_path);
    RunConfig cfg = config_from_echo(bundle.config_echo);
    Dataset data = load_tsv(a.data_path, &bundle.vocab, &bundle.labels, 1, cfg.max_len);
    EvalReport report =
        evaluate_model(bundle, data, cfg.seq_len, cfg.include_embedding_params);
    write_report(report, a.out);
    std::cout << "accuracy " << report.accuracy << " macro_f1 " << report.macro_f1
              << " forced_final_accuracy " << report.forced_final_accuracy << '\n'
              << "expected_flops " << report.expected_flops << " baseline_flops "
              << report.baseline_flops << " relative_savings "
              << report.relative_savings << '\n'
              << "report written to " << a.out << '\n';
    return 0;
}

int cmd_report(const Args& a) {
    if (a.positional.empty()) throw ConfigError("report: at least one REPORT file");
    if (a.out_dir.empty()) throw ConfigError("report: --out-dir DIR is required");
    std::vector<nlohmann::json> reports;
    for (const auto& path : a.positional) reports.push_back(load_report_json(path));
    write_report_csvs(reports, a.out_dir);
    std::cout << "CSV tables written to " << a.out_dir << '\n';
    return 0;
}

int cmd_synth(const Args& a) {
    if (a.out.empty()) throw ConfigError("synth: --out TSV is required");
    RunConfig cfg = resolve_config(a);
    std::uint64_t seed = cfg.require_seed();
    Dataset ds = synth_generate(cfg.classes, cfg.per_class, cfg.vocab_per_class,
                                cfg.noise, seed);
    write_tsv(ds, a.out);
    std::cout << "wrote " << ds.size() << " examples, " << ds.n_classes()
              << " labels to " << a.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) return usage();
    std::string cmd = argv[1];
    try {
        Args a = parse_args(argc, argv, 2);
        if (cmd == "train") return cmd_train(a);
        if (cmd == "eval") return cmd_eval(a);
        if (cmd == "report") return cmd_report(a);
        if (cmd == "synth") return cmd_synth(a);
        return usage();
    } catch (const branchy::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const branchy::ParseError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const branchy::LabelError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const branchy::FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const branchy::IndexError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
