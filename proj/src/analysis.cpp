#include "evalnexus/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "evalnexus/error.hpp"

namespace evalnexus {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    cells.push_back(trim(cell));
    return cells;
}

ModelGroup parse_group(const std::string& text, std::size_t line_no) {
    std::string g;
    for (char c : text) {
        if (c != '-' && c != '_' && c != ' ') {
            g += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    if (g == "zeroshot") {
        return ModelGroup::ZeroShot;
    }
    if (g == "finetuned") {
        return ModelGroup::Finetuned;
    }
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": unknown group '" + text + "'", line_no);
}

double parse_cell(const std::string& text, std::size_t line_no) {
    if (text.empty() || text == "NA" || text == "nan" || text == "NaN") {
        return kNaN;
    }
    double v = 0.0;
    const auto* begin = text.data() + (text.front() == '+' ? 1 : 0);
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
        throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": bad number '" + text + "'", line_no);
    }
    return v;
}

std::string fixed(double v, int decimals) {
    if (std::isnan(v)) {
        return "NA";
    }
    std::ostringstream out;
    out << std::fixed << std::setprecision(decimals) << v;
    auto s = out.str();
    // "-0.000" reads as a sign error in tables.
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') {
        s.erase(0, 1);
    }
    return s;
}

struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
    double max = -std::numeric_limits<double>::infinity();
    std::string arg;

    void add(double v, const std::string& who) {
        sum += v;
        ++n;
        if (v > max) {
            max = v;
            arg = who;
        }
    }
    double mean() const { return n ? sum / static_cast<double>(n) : kNaN; }
};

} // namespace

std::string_view to_string(ModelGroup group) noexcept {
    return group == ModelGroup::ZeroShot ? "zero-shot" : "finetuned";
}

std::size_t ResultsMatrix::dataset_index(std::string_view name) const {
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        if (datasets[i] == name) {
            return i;
        }
    }
    throw Error(ErrorKind::InvalidArgument, "no dataset '" + std::string(name) + "' in the matrix");
}

std::vector<double> ResultsMatrix::column(std::size_t dataset) const {
    std::vector<double> col;
    col.reserve(values.size());
    for (const auto& row : values) {
        col.push_back(row.at(dataset));
    }
    return col;
}

void ResultsMatrix::validate() const {
    if (groups.size() != models.size() || values.size() != models.size()) {
        throw Error(ErrorKind::InvalidArgument, "results matrix rows do not match the model list");
    }
    for (const auto& row : values) {
        if (row.size() != datasets.size()) {
            throw Error(ErrorKind::InvalidArgument, "results matrix columns do not match the dataset list");
        }
    }
}

ResultsMatrix ResultsMatrix::parse_csv(std::istream& in) {
    ResultsMatrix m;
    std::string line;
    std::size_t line_no = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto cells = split_csv_line(line);
        if (header) {
            if (cells.size() < 3 || cells[0] != "model" || cells[1] != "group") {
                throw Error(ErrorKind::ParseError,
                            "line " + std::to_string(line_no) + ": header must be model,group,<dataset...>", line_no);
            }
            m.datasets.assign(cells.begin() + 2, cells.end());
            header = false;
            continue;
        }
        if (cells.size() != m.datasets.size() + 2) {
            throw Error(ErrorKind::ParseError,
                        "line " + std::to_string(line_no) + ": expected " + std::to_string(m.datasets.size() + 2) +
                            " cells, got " + std::to_string(cells.size()),
                        line_no);
        }
        m.models.push_back(cells[0]);
        m.groups.push_back(parse_group(cells[1], line_no));
        std::vector<double> row;
        for (std::size_t i = 2; i < cells.size(); ++i) {
            row.push_back(parse_cell(cells[i], line_no));
        }
        m.values.push_back(std::move(row));
    }
    if (header) {
        throw Error(ErrorKind::ParseError, "empty results matrix", line_no);
    }
    return m;
}

ResultsMatrix ResultsMatrix::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    try {
        return parse_csv(in);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what(), e.line());
    }
}

std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) {
            ++j;
        }
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw Error(ErrorKind::InvalidArgument, "spearman inputs differ in length");
    }
    std::vector<double> a;
    std::vector<double> b;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!std::isnan(xs[i]) && !std::isnan(ys[i])) {
            a.push_back(xs[i]);
            b.push_back(ys[i]);
        }
    }
    if (a.size() < 3) {
        throw Error(ErrorKind::TooFewPoints, "spearman needs at least 3 paired values, got " + std::to_string(a.size()));
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(ra.size());
    const double mean = (n + 1.0) / 2.0; // average ranks always sum to n(n+1)/2
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - mean;
        const double db = rb[i] - mean;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        throw Error(ErrorKind::ZeroVariance, "spearman input has constant ranks");
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

CorrelationTable correlation_table(const ResultsMatrix& matrix) {
    matrix.validate();
    CorrelationTable table;
    table.datasets = matrix.datasets;
    const auto n = matrix.datasets.size();
    table.rho.assign(n, std::vector<double>(n, 1.0));
    std::vector<std::vector<double>> columns;
    for (std::size_t d = 0; d < n; ++d) {
        columns.push_back(matrix.column(d));
    }
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const double rho = spearman(columns[a], columns[b]);
            table.rho[a][b] = rho;
            table.rho[b][a] = rho;
        }
    }
    return table;
}

std::string CorrelationTable::to_csv() const {
    std::string out = "dataset";
    for (const auto& d : datasets) {
        out += "," + d;
    }
    out += "\n";
    for (std::size_t a = 0; a < datasets.size(); ++a) {
        out += datasets[a];
        for (std::size_t b = 0; b < datasets.size(); ++b) {
            out += "," + fixed(rho[a][b], 3);
        }
        out += "\n";
    }
    return out;
}

std::string CorrelationTable::to_text() const {
    std::size_t label_width = 0;
    for (const auto& d : datasets) {
        label_width = std::max(label_width, d.size());
    }
    std::ostringstream out;
    out << std::setw(static_cast<int>(label_width)) << "";
    for (const auto& d : datasets) {
        out << "  " << std::setw(static_cast<int>(std::max<std::size_t>(d.size(), 6))) << d;
    }
    out << "\n";
    for (std::size_t a = 0; a < datasets.size(); ++a) {
        out << std::left << std::setw(static_cast<int>(label_width)) << datasets[a] << std::right;
        for (std::size_t b = 0; b < datasets.size(); ++b) {
            out << "  " << std::setw(static_cast<int>(std::max<std::size_t>(datasets[b].size(), 6)))
                << fixed(rho[a][b], 3);
        }
        out << "\n";
    }
    return out.str();
}

const DatasetSummary& MacroSummary::dataset(std::string_view name) const {
    for (const auto& d : per_dataset) {
        if (d.dataset == name) {
            return d;
        }
    }
    throw Error(ErrorKind::InvalidArgument, "no dataset '" + std::string(name) + "' in the summary");
}

MacroSummary macro_summary(const ResultsMatrix& matrix) {
    matrix.validate();
    const bool has_zero = std::count(matrix.groups.begin(), matrix.groups.end(), ModelGroup::ZeroShot) > 0;
    const bool has_fine = std::count(matrix.groups.begin(), matrix.groups.end(), ModelGroup::Finetuned) > 0;
    if (!has_zero || !has_fine) {
        throw Error(ErrorKind::EmptyGroup, "macro summary needs both zero-shot and finetuned models");
    }
    MacroSummary s;
    Acc zero_macro;
    Acc fine_macro;
    for (std::size_t d = 0; d < matrix.datasets.size(); ++d) {
        Acc all;
        Acc zero;
        Acc fine;
        for (std::size_t m = 0; m < matrix.models.size(); ++m) {
            const double v = matrix.values[m][d];
            if (std::isnan(v)) {
                continue;
            }
            all.add(v, matrix.models[m]);
            (matrix.groups[m] == ModelGroup::ZeroShot ? zero : fine).add(v, matrix.models[m]);
        }
        DatasetSummary ds;
        ds.dataset = matrix.datasets[d];
        ds.mean_all = all.mean();
        ds.zero_shot = {zero.n ? zero.max : kNaN, zero.mean(), zero.arg};
        ds.finetuned = {fine.n ? fine.max : kNaN, fine.mean(), fine.arg};
        if (zero.n && fine.n) {
            zero_macro.add(zero.max, ds.dataset);
            fine_macro.add(fine.max, ds.dataset);
        }
        s.per_dataset.push_back(std::move(ds));
    }
    s.zero_shot_macro_best = zero_macro.mean();
    s.finetuned_macro_best = fine_macro.mean();
    s.ratio_per_dataset_best = s.finetuned_macro_best / s.zero_shot_macro_best - 1.0;

    Acc best_zero;
    Acc best_fine;
    for (std::size_t m = 0; m < matrix.models.size(); ++m) {
        Acc row;
        for (double v : matrix.values[m]) {
            if (!std::isnan(v)) {
                row.add(v, matrix.models[m]);
            }
        }
        if (row.n) {
            (matrix.groups[m] == ModelGroup::ZeroShot ? best_zero : best_fine).add(row.mean(), matrix.models[m]);
        }
    }
    s.zero_shot_best_model = best_zero.arg;
    s.finetuned_best_model = best_fine.arg;
    s.zero_shot_best_model_macro = best_zero.max;
    s.finetuned_best_model_macro = best_fine.max;
    s.ratio_best_single_model = best_fine.max / best_zero.max - 1.0;
    return s;
}

Json MacroSummary::to_json() const {
    auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
    Json j = Json::object();
    j["per_dataset"] = Json::array();
    for (const auto& d : per_dataset) {
        j["per_dataset"].push_back({
            {"dataset", d.dataset},
            {"mean_all", num(d.mean_all)},
            {"zero_shot", {{"max", num(d.zero_shot.max)}, {"mean", num(d.zero_shot.mean)}, {"best_model", d.zero_shot.best_model}}},
            {"finetuned", {{"max", num(d.finetuned.max)}, {"mean", num(d.finetuned.mean)}, {"best_model", d.finetuned.best_model}}},
        });
    }
    j["macro_best"] = {{"zero_shot", num(zero_shot_macro_best)}, {"finetuned", num(finetuned_macro_best)}};
    j["finetuned_vs_zero_shot"] = {
        {"note", "interpretation-dependent: 'best' read per dataset or as the best single model"},
        {"per_dataset_best", {{"zero_shot_macro", num(zero_shot_macro_best)},
                              {"finetuned_macro", num(finetuned_macro_best)},
                              {"relative_gain", num(ratio_per_dataset_best)}}},
        {"best_single_model", {{"zero_shot_model", zero_shot_best_model},
                               {"zero_shot_macro", num(zero_shot_best_model_macro)},
                               {"finetuned_model", finetuned_best_model},
                               {"finetuned_macro", num(finetuned_best_model_macro)},
                               {"relative_gain", num(ratio_best_single_model)}}},
    };
    return j;
}

std::string MacroSummary::to_text() const {
    std::size_t width = 7;
    for (const auto& d : per_dataset) {
        width = std::max(width, d.dataset.size());
    }
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(width)) << "dataset" << std::right << std::setw(10) << "mean(all)"
        << std::setw(10) << "zs max" << std::setw(10) << "zs mean" << std::setw(10) << "ft max" << std::setw(10)
        << "ft mean" << "\n";
    for (const auto& d : per_dataset) {
        out << std::left << std::setw(static_cast<int>(width)) << d.dataset << std::right << std::setw(10)
            << fixed(d.mean_all, 1) << std::setw(10) << fixed(d.zero_shot.max, 1) << std::setw(10)
            << fixed(d.zero_shot.mean, 1) << std::setw(10) << fixed(d.finetuned.max, 1) << std::setw(10)
            << fixed(d.finetuned.mean, 1) << "\n";
    }
    out << "\nmacro average of per-dataset best: zero-shot " << fixed(zero_shot_macro_best, 1) << ", finetuned "
        << fixed(finetuned_macro_best, 1) << "\n";
    out << "finetuned vs zero-shot (per-dataset best): " << fixed(100.0 * ratio_per_dataset_best, 1) << "% greater\n";
    out << "finetuned vs zero-shot (best single model: " << finetuned_best_model << " "
        << fixed(finetuned_best_model_macro, 1) << " vs " << zero_shot_best_model << " "
        << fixed(zero_shot_best_model_macro, 1) << "): " << fixed(100.0 * ratio_best_single_model, 1)
        << "% greater\n";
    out << "note: the finetuned-vs-zero-shot gain depends on how 'best' is read; both readings are shown\n";
    return out.str();
}

} // namespace evalnexus
