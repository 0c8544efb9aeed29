#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "nestedcp/factor_model.hpp"
#include "nestedcp/tensor_io.hpp"

namespace nestedcp {

// Text model format (all indices 1-based, reals at 17 significant digits):
//
//   nestedcp-model 1
//   order d
//   rank r
//   dims n_1 .. n_d
//   groups m_1 .. m_d
//   latent k        followed by n_k rows of r reals      (for k = 1..d)
//   nested k        followed by m_k rows of r reals      (for k = 1..d)
//   assignment k    followed by n_k subgroup labels       (for k = 1..d)
//   cold k          followed by n_k 0/1 flags             (for k = 1..d)
//   end

inline void write_model(std::ostream& out, const FactorModel& m) {
    const std::size_t d = m.order();
    out << "nestedcp-model 1\norder " << d << "\nrank " << m.rank << "\ndims";
    for (std::size_t k = 0; k < d; ++k) out << ' ' << m.dim(k);
    out << "\ngroups";
    for (std::size_t k = 0; k < d; ++k) out << ' ' << m.subgroups.groups(k);
    out << '\n';
    auto rows = [&](const char* tag, const std::vector<Matrix>& ms) {
        for (std::size_t k = 0; k < d; ++k) {
            out << tag << ' ' << k + 1 << '\n';
            for (Eigen::Index i = 0; i < ms[k].rows(); ++i) {
                for (Eigen::Index j = 0; j < ms[k].cols(); ++j) out << (j ? " " : "") << detail::format_real(ms[k](i, j));
                out << '\n';
            }
        }
    };
    rows("latent", m.latent);
    rows("nested", m.nested);
    for (std::size_t k = 0; k < d; ++k) {
        out << "assignment " << k + 1 << '\n';
        for (std::size_t i = 0; i < m.dim(k); ++i) out << (i ? " " : "") << m.subgroups.group_of(k, static_cast<index_t>(i)) + 1;
        out << '\n';
    }
    for (std::size_t k = 0; k < d; ++k) {
        out << "cold " << k + 1 << '\n';
        for (std::size_t i = 0; i < m.dim(k); ++i) out << (i ? " " : "") << int(m.cold[k][i]);
        out << '\n';
    }
    out << "end\n";
}

namespace detail {

class TokenReader {
public:
    explicit TokenReader(std::istream& in) : in_(in) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) throw DataError("model file truncated");
        return w;
    }

    void expect(const std::string& w) {
        const std::string got = word();
        if (got != w) throw DataError("model file: expected '" + w + "', found '" + got + "'");
    }

    template <class T>
    T number() {
        const std::string w = word();
        T v{};
        if (!parse_number(std::string_view(w), v)) throw DataError("model file: bad number '" + w + "'");
        return v;
    }

private:
    std::istream& in_;
};

}  // namespace detail

inline FactorModel read_model(std::istream& in) {
    detail::TokenReader rd(in);
    rd.expect("nestedcp-model");
    if (rd.number<int>() != 1) throw DataError("model file: unsupported version");
    rd.expect("order");
    const auto d = rd.number<std::size_t>();
    rd.expect("rank");
    const auto r = rd.number<std::size_t>();
    if (d < 2 || r < 1) throw DataError("model file: bad order or rank");
    std::vector<std::size_t> dims(d), groups(d);
    rd.expect("dims");
    for (auto& n : dims) n = rd.number<std::size_t>();
    rd.expect("groups");
    for (auto& m : groups) m = rd.number<std::size_t>();

    auto read_rows = [&](const char* tag, std::span<const std::size_t> counts) {
        std::vector<Matrix> ms;
        for (std::size_t k = 0; k < d; ++k) {
            rd.expect(tag);
            if (rd.number<std::size_t>() != k + 1) throw DataError(std::string("model file: ") + tag + " blocks out of order");
            Matrix mk(static_cast<Eigen::Index>(counts[k]), static_cast<Eigen::Index>(r));
            for (Eigen::Index i = 0; i < mk.rows(); ++i)
                for (Eigen::Index j = 0; j < mk.cols(); ++j) mk(i, j) = rd.number<double>();
            ms.push_back(std::move(mk));
        }
        return ms;
    };
    auto latent = read_rows("latent", dims);
    auto nested = read_rows("nested", groups);

    std::vector<std::vector<index_t>> assignment(d);
    for (std::size_t k = 0; k < d; ++k) {
        rd.expect("assignment");
        if (rd.number<std::size_t>() != k + 1) throw DataError("model file: assignment blocks out of order");
        for (std::size_t i = 0; i < dims[k]; ++i) {
            const auto g = rd.number<std::size_t>();
            if (g < 1 || g > groups[k]) throw DataError("model file: subgroup label out of range");
            assignment[k].push_back(static_cast<index_t>(g - 1));
        }
    }
    FactorModel m(dims, r, SubgroupMap(std::move(assignment), groups));
    m.latent = std::move(latent);
    m.nested = std::move(nested);
    for (std::size_t k = 0; k < d; ++k) {
        rd.expect("cold");
        if (rd.number<std::size_t>() != k + 1) throw DataError("model file: cold blocks out of order");
        for (std::size_t i = 0; i < dims[k]; ++i) m.cold[k][i] = static_cast<std::uint8_t>(rd.number<int>() != 0);
    }
    rd.expect("end");
    m.validate();
    return m;
}

inline void save_model(const std::filesystem::path& path, const FactorModel& m) {
    auto out = detail::open_out(path);
    write_model(out, m);
    if (!out) throw IoError("write failed: " + path.string());
}

inline FactorModel load_model(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return read_model(in);
}

}  // namespace nestedcp
