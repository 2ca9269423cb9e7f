#include "kpriors/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "kpriors/rng.hpp"

namespace kpriors {

LabeledData concat(const LabeledData& a, const LabeledData& b) {
    if (a.size() == 0) return b;
    if (b.size() == 0) return a;
    if (a.dim() != b.dim()) {
        throw std::invalid_argument("concat: input widths differ");
    }
    LabeledData out;
    out.inputs.resize(a.size() + b.size(), a.dim());
    out.inputs << a.inputs, b.inputs;
    out.labels.resize(a.size() + b.size());
    out.labels << a.labels, b.labels;
    return out;
}

LabeledData take_rows(const LabeledData& data, const std::vector<Eigen::Index>& rows) {
    LabeledData out;
    out.inputs.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
    out.labels.resize(static_cast<Eigen::Index>(rows.size()));
    Eigen::Index k = 0;
    for (Eigen::Index r : rows) {
        if (r < 0 || r >= data.size()) throw std::out_of_range("take_rows: row index out of range");
        out.inputs.row(k) = data.inputs.row(r);
        out.labels[k] = data.labels[r];
        ++k;
    }
    return out;
}

LabeledData drop_rows(const LabeledData& data, const std::vector<Eigen::Index>& rows) {
    std::set<Eigen::Index> removed;
    for (Eigen::Index r : rows) {
        if (r < 0 || r >= data.size()) throw std::out_of_range("drop_rows: row index out of range");
        if (!removed.insert(r).second) throw std::invalid_argument("drop_rows: duplicate row index");
    }
    std::vector<Eigen::Index> keep;
    keep.reserve(data.size() - removed.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (!removed.count(i)) keep.push_back(i);
    }
    return take_rows(data, keep);
}

LabeledData load_sparse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_sparse: cannot open " + path);

    struct Row {
        double label;
        std::vector<std::pair<long, double>> entries;
    };
    std::vector<Row> rows;
    long max_index = 0;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Row row;
        if (!(ls >> row.label)) {
            throw std::runtime_error("load_sparse: bad label at line " + std::to_string(line_no));
        }
        std::string tok;
        long prev = 0;
        while (ls >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos) {
                throw std::runtime_error("load_sparse: missing ':' at line " + std::to_string(line_no));
            }
            long idx = 0;
            double val = 0.0;
            try {
                std::size_t used = 0;
                idx = std::stol(tok.substr(0, colon), &used);
                if (used != colon) throw std::invalid_argument("trailing");
                val = std::stod(tok.substr(colon + 1), &used);
                if (used != tok.size() - colon - 1) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw std::runtime_error("load_sparse: malformed entry '" + tok + "' at line " +
                                         std::to_string(line_no));
            }
            if (idx < 1) {
                throw std::runtime_error("load_sparse: index must be >= 1 at line " +
                                         std::to_string(line_no));
            }
            if (idx <= prev) {
                throw std::runtime_error("load_sparse: indices not ascending at line " +
                                         std::to_string(line_no));
            }
            prev = idx;
            max_index = std::max(max_index, idx);
            row.entries.emplace_back(idx, val);
        }
        rows.push_back(std::move(row));
    }

    LabeledData data;
    data.inputs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), max_index);
    data.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        data.labels[static_cast<Eigen::Index>(i)] = rows[i].label;
        for (const auto& [idx, val] : rows[i].entries) {
            data.inputs(static_cast<Eigen::Index>(i), idx - 1) = val;
        }
    }
    return data;
}

void save_sparse(const LabeledData& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_sparse: cannot open " + path);
    char buf[64];
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", data.labels[i]);
        out << buf;
        for (Eigen::Index j = 0; j < data.dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.inputs(i, j));
            out << ' ' << (j + 1) << ':' << buf;
        }
        out << '\n';
    }
}

LabeledData load_dense_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dense_csv: cannot open " + path);

    auto split_line = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(s);
        while (std::getline(ls, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            cells.push_back(cell);
        }
        return cells;
    };

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_dense_csv: empty file " + path);
    const auto header = split_line(line);
    long label_col = -1;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == label_column) label_col = static_cast<long>(j);
    }
    if (label_col < 0) {
        throw std::runtime_error("load_dense_csv: label column '" + label_column + "' not found");
    }

    std::vector<std::vector<double>> feats;
    std::vector<double> labels;
    long row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size()) {
            throw std::runtime_error("load_dense_csv: wrong cell count at row " +
                                     std::to_string(row_no));
        }
        std::vector<double> row;
        for (std::size_t j = 0; j < cells.size(); ++j) {
            double v = 0.0;
            try {
                std::size_t used = 0;
                v = std::stod(cells[j], &used);
                if (used != cells[j].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw std::runtime_error("load_dense_csv: non-numeric cell at row " +
                                         std::to_string(row_no) + ", column " + header[j]);
            }
            if (static_cast<long>(j) == label_col) {
                labels.push_back(v);
            } else {
                row.push_back(v);
            }
        }
        feats.push_back(std::move(row));
    }

    LabeledData data;
    const Eigen::Index n = static_cast<Eigen::Index>(feats.size());
    const Eigen::Index d = static_cast<Eigen::Index>(header.size() - 1);
    data.inputs.resize(n, d);
    data.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        data.labels[i] = labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < d; ++j) {
            data.inputs(i, j) = feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return data;
}

LabeledData make_moons(int n, double noise, std::uint64_t seed) {
    if (n % 2 != 0) throw std::invalid_argument("make_moons: n must be even");
    const int half = n / 2;
    LabeledData data;
    data.inputs.resize(n, 2);
    data.labels.resize(n);
    Rng rng(seed);
    for (int i = 0; i < half; ++i) {
        const double t = half == 1 ? 0.0 : M_PI * i / (half - 1);
        data.inputs(i, 0) = std::cos(t);
        data.inputs(i, 1) = std::sin(t);
        data.labels[i] = 0.0;
        data.inputs(half + i, 0) = 1.0 - std::cos(t);
        data.inputs(half + i, 1) = 0.5 - std::sin(t);
        data.labels[half + i] = 1.0;
    }
    if (noise > 0.0) {
        for (int i = 0; i < n; ++i) {
            data.inputs(i, 0) += noise * rng.normal();
            data.inputs(i, 1) += noise * rng.normal();
        }
    }
    return data;
}

std::vector<LabeledData> ordered_splits(const LabeledData& data, int k) {
    if (k <= 0 || data.size() % k != 0) {
        throw std::invalid_argument("ordered_splits: k must divide the number of rows");
    }
    std::vector<Eigen::Index> order(data.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return data.inputs(a, 0) < data.inputs(b, 0);
    });
    const Eigen::Index chunk = data.size() / k;
    std::vector<LabeledData> splits;
    splits.reserve(k);
    for (int s = 0; s < k; ++s) {
        std::vector<Eigen::Index> rows(order.begin() + s * chunk, order.begin() + (s + 1) * chunk);
        splits.push_back(take_rows(data, rows));
    }
    return splits;
}

Standardization standardize(LabeledData& train, std::vector<LabeledData*> others) {
    if (train.size() == 0) throw std::invalid_argument("standardize: empty training set");
    const Eigen::Index d = train.dim();
    Standardization st;
    st.mean = train.inputs.colwise().mean();
    st.std.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (train.inputs.col(j).array() - st.mean[j]).square().mean();
        const double sd = std::sqrt(var);
        if (sd > 0.0) {
            st.std[j] = sd;
        } else {
            // Constant column: identity transform.
            st.mean[j] = 0.0;
            st.std[j] = 1.0;
        }
    }
    auto apply = [&](LabeledData& set) {
        for (Eigen::Index j = 0; j < d; ++j) {
            set.inputs.col(j) = (set.inputs.col(j).array() - st.mean[j]) / st.std[j];
        }
    };
    apply(train);
    for (LabeledData* other : others) {
        if (other) apply(*other);
    }
    return st;
}

std::pair<LabeledData, LabeledData> split_holdout(const LabeledData& data, const SplitSpec& spec) {
    if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) {
        throw std::invalid_argument("split_holdout: fraction must be in (0, 1]");
    }
    Rng rng(spec.seed);
    std::vector<Eigen::Index> held;
    if (spec.stratify) {
        std::map<double, std::vector<Eigen::Index>> by_label;
        for (Eigen::Index i = 0; i < data.size(); ++i) by_label[data.labels[i]].push_back(i);
        for (auto& [label, rows] : by_label) {
            const auto m = static_cast<std::size_t>(
                std::llround(spec.fraction * static_cast<double>(rows.size())));
            auto pick = rng.sample_without_replacement(rows.size(), m);
            for (std::size_t p : pick) held.push_back(rows[p]);
        }
        std::sort(held.begin(), held.end());
    } else {
        const auto m = static_cast<std::size_t>(
            std::llround(spec.fraction * static_cast<double>(data.size())));
        for (std::size_t p : rng.sample_without_replacement(
                 static_cast<std::size_t>(data.size()), m)) {
            held.push_back(static_cast<Eigen::Index>(p));
        }
    }
    return {drop_rows(data, held), take_rows(data, held)};
}

}  // namespace kpriors
