#include "teracon/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "teracon/metrics.hpp"
#include "teracon/records.hpp"

namespace teracon {

namespace {

struct LoadedRun {
    std::string dir;
    std::string method;
    std::string order;
    std::string sampling;
    bool noisy{false};
    std::uint64_t seed{0};
    ResultsMatrix matrix;
    std::vector<MetricRecord> records;
    std::vector<TimingRecord> timings;
};

LoadedRun load_run(const std::string& dir, std::vector<std::string>& warnings) {
    LoadedRun run;
    run.dir = dir;
    std::ifstream in(dir + "/run.json");
    if (!in) throw std::runtime_error("report: missing " + dir + "/run.json");
    std::stringstream buf;
    buf << in.rdbuf();
    const auto j = nlohmann::json::parse(buf.str());
    run.method = j.value("method", "?");
    run.order = j.value("order", "forward");
    run.sampling = j.value("sampling", "relation");
    run.noisy = j.value("noisy_task", false);
    run.seed = j.value("seed", std::uint64_t{0});
    run.records = read_metric_records(dir + "/metrics.jsonl");
    run.matrix = build_results_matrix(run.records);
    std::ifstream t(dir + "/timings.jsonl");
    if (t.good()) run.timings = read_timing_records(dir + "/timings.jsonl");
    const auto missing = run.matrix.missing_cells();
    if (!missing.empty() && run.method != "sinmo" && run.method != "fineall") {
        std::ostringstream warn;
        warn << "warning: " << dir << " is missing matrix cells:";
        for (const auto& m : missing) warn << " " << m;
        warnings.push_back(warn.str());
    }
    return run;
}

std::string fmt_score(std::optional<double> v) {
    if (!v.has_value()) return "-";
    std::ostringstream out;
    out << std::fixed << std::setprecision(4) << *v;
    return out.str();
}

std::string fmt_pct(std::optional<double> v) {
    if (!v.has_value()) return "-";
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << *v << "%";
    return out.str();
}

void render_row(std::ostringstream& out, const std::vector<std::string>& cells,
                const std::vector<std::size_t>& widths) {
    for (std::size_t i = 0; i < cells.size(); ++i)
        out << std::left << std::setw(static_cast<int>(widths[i]) + 2) << cells[i];
    out << "\n";
}

void render_table(std::ostringstream& out, const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return;
    std::vector<std::size_t> widths(rows[0].size(), 0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
    for (const auto& r : rows) render_row(out, r, widths);
}

}  // namespace

std::string render_report(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw std::runtime_error("report: no run directories given");
    std::vector<std::string> warnings;
    std::vector<LoadedRun> runs;
    for (const auto& d : run_dirs) runs.push_back(load_run(d, warnings));

    // Task names from the widest clean forward run.
    const LoadedRun* reference_shape = &runs[0];
    for (const auto& r : runs)
        if (!r.noisy && r.matrix.num_tasks > reference_shape->matrix.num_tasks)
            reference_shape = &r;

    // SinMo reference row for forward transfer.
    std::optional<std::vector<double>> sinmo_row;
    for (const auto& r : runs) {
        if (r.method != "sinmo" || r.noisy) continue;
        std::vector<double> row;
        bool ok = true;
        for (std::size_t t = 0; t < r.matrix.num_tasks; ++t) {
            const auto v = r.matrix.own(t);
            if (!v.has_value()) ok = false;
            else row.push_back(*v);
        }
        if (ok) sinmo_row = std::move(row);
    }

    std::ostringstream out;
    for (const auto& w : warnings) out << w << "\n";

    out << "== Final scores (after the last trained task) ==\n";
    {
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> head{"method"};
        for (const auto& n : reference_shape->matrix.task_names) head.push_back(n);
        rows.push_back(head);
        for (const auto& r : runs) {
            if (r.noisy) continue;
            std::vector<std::string> row{r.method};
            for (std::size_t t = 0; t < reference_shape->matrix.num_tasks; ++t) {
                const auto& names = r.matrix.task_names;
                const auto it = std::find(names.begin(), names.end(),
                                          reference_shape->matrix.task_names[t]);
                if (it == names.end()) {
                    row.push_back("-");
                    continue;
                }
                const std::size_t idx = static_cast<std::size_t>(it - names.begin());
                const bool per_task = r.method == "sinmo" || r.method == "fineall";
                row.push_back(fmt_score(per_task ? r.matrix.own(idx)
                                                 : r.matrix.final_score(idx)));
            }
            rows.push_back(std::move(row));
        }
        render_table(out, rows);
    }

    out << "\n== Transfer ==\n";
    {
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"method", "task", "score", "BWT", "FWT"});
        for (auto& r : runs) {
            if (r.noisy || r.method == "sinmo" || r.method == "fineall") continue;
            ResultsMatrix m = r.matrix;
            if (sinmo_row.has_value() && sinmo_row->size() == m.num_tasks)
                m.reference = sinmo_row;
            for (std::size_t t = 0; t < m.num_tasks; ++t) {
                rows.push_back({r.method, m.task_names[t], fmt_score(m.final_score(t)),
                                fmt_pct(m.bwt(t)), fmt_pct(m.fwt(t))});
            }
        }
        render_table(out, rows);
    }

    // Noisy degradation: pair each noisy run with the clean run of the same
    // method and seed; percentages are (after - before) / before * 100.
    {
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> head{"method"};
        for (const auto& n : reference_shape->matrix.task_names) head.push_back(n);
        rows.push_back(head);
        for (const auto& noisy : runs) {
            if (!noisy.noisy) continue;
            const LoadedRun* clean = nullptr;
            for (const auto& r : runs)
                if (!r.noisy && r.method == noisy.method && r.seed == noisy.seed) clean = &r;
            if (clean == nullptr) continue;
            std::vector<std::string> row{noisy.method};
            for (const auto& name : reference_shape->matrix.task_names) {
                const auto& nn = noisy.matrix.task_names;
                const auto& cn = clean->matrix.task_names;
                const auto nit = std::find(nn.begin(), nn.end(), name);
                const auto cit = std::find(cn.begin(), cn.end(), name);
                if (nit == nn.end() || cit == cn.end()) {
                    row.push_back("-");
                    continue;
                }
                const auto after = noisy.matrix.final_score(
                    static_cast<std::size_t>(nit - nn.begin()));
                const auto before = clean->matrix.final_score(
                    static_cast<std::size_t>(cit - cn.begin()));
                if (!after.has_value() || !before.has_value() || *before <= 0.0) {
                    row.push_back("-");
                    continue;
                }
                const double pct = (*after - *before) / *before * 100.0;
                std::ostringstream cell;
                cell << std::fixed << std::setprecision(4) << *after << " ("
                     << std::setprecision(2) << pct << "%)";
                row.push_back(cell.str());
            }
            rows.push_back(std::move(row));
        }
        if (rows.size() > 1) {
            out << "\n== Noisy-task degradation vs clean run ==\n";
            render_table(out, rows);
        }
    }

    // Sampling comparison with per-epoch seconds and pseudo-label counts.
    {
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"method", "sampling", "final-task score", "pseudo-users/epoch",
                        "sec/epoch"});
        std::map<std::string, std::vector<const LoadedRun*>> by_method;
        for (const auto& r : runs)
            if (!r.noisy && r.method != "sinmo" && r.method != "fineall" &&
                r.method != "conure")
                by_method[r.method].push_back(&r);
        bool interesting = false;
        for (const auto& [m, group] : by_method) {
            if (group.size() > 1) interesting = true;
            for (const LoadedRun* r : group) {
                const std::size_t last = r->matrix.num_tasks - 1;
                double pseudo_sum = 0.0;
                std::size_t pseudo_n = 0;
                for (const auto& rec : r->records)
                    if (rec.metric == "pseudo_label_users") {
                        pseudo_sum += rec.value;
                        ++pseudo_n;
                    }
                double sec_sum = 0.0;
                std::size_t sec_n = 0;
                for (const auto& t : r->timings) {
                    sec_sum += t.seconds;
                    ++sec_n;
                }
                std::ostringstream pseudo, secs;
                if (pseudo_n > 0)
                    pseudo << std::fixed << std::setprecision(1)
                           << pseudo_sum / static_cast<double>(pseudo_n);
                else
                    pseudo << "-";
                if (sec_n > 0)
                    secs << std::fixed << std::setprecision(2)
                         << sec_sum / static_cast<double>(sec_n);
                else
                    secs << "-";
                rows.push_back({r->method, r->sampling,
                                fmt_score(r->matrix.final_score(last)), pseudo.str(),
                                secs.str()});
            }
        }
        if (interesting) {
            out << "\n== Sampling strategies ==\n";
            render_table(out, rows);
        }
    }

    return out.str();
}

}  // namespace teracon
