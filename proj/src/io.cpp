#include "secrms/io.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "secrms/model.h"

namespace secrms {

using nlohmann::json;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
    if (s == "nan" || s == "NA") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError("not a number: '" + std::string(s) + "'");
    }
    return v;
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

template <class T>
T parse_int(std::string_view s) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError("not an integer: '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t at = s.find(sep, start);
        out.push_back(s.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
        if (at == std::string_view::npos) break;
        start = at + 1;
    }
    return out;
}

// Whitespace-separated records, skipping blank lines and comments after the header.
class RecordReader {
  public:
    RecordReader(std::istream& is, std::string_view header) : is_(is) {
        std::string line;
        if (!std::getline(is_, line) || trim(line) != header) {
            throw DataError("expected header '" + std::string(header) + "'");
        }
        ++line_no_;
    }

    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(is_, line)) {
            ++line_no_;
            const std::string_view t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            fields.clear();
            std::istringstream ss{std::string(t)};
            std::string f;
            while (ss >> f) fields.push_back(f);
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("line " + std::to_string(line_no_) + ": " + what);
    }

    void expect(const std::vector<std::string>& f, std::size_t n) const {
        if (f.size() != n) fail("record '" + f[0] + "' needs " + std::to_string(n - 1) + " values");
    }

  private:
    static std::string_view trim(std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    }

    std::istream& is_;
    int line_no_ = 0;
};

constexpr std::string_view kDatasetHeader = "# secrms-dataset v1";
constexpr std::string_view kTruthHeader = "# secrms-truth v1";

} // namespace

void write_dataset(const CaptureDataset& d, std::ostream& os) {
    os << kDatasetHeader << '\n';
    os << "M " << d.M << '\n' << "J " << d.J << '\n' << "K " << d.K << '\n';
    os << "n_full " << d.n_full << '\n';
    os << "statespace " << format_double(d.space.x_min) << ' ' << format_double(d.space.x_max) << ' '
       << format_double(d.space.y_min) << ' ' << format_double(d.space.y_max) << ' '
       << format_double(d.space.grid_resolution) << '\n';
    for (const Point& p : d.traps.locations) {
        os << "trap " << format_double(p.x) << ' ' << format_double(p.y) << '\n';
    }
    for (int det = 1; det <= 2; ++det) {
        const auto& y = det == 1 ? d.y1 : d.y2;
        for (int i = 0; i < d.M; ++i) {
            for (int j = 0; j < d.J; ++j) {
                for (int k = 0; k < d.K; ++k) {
                    if (y[d.cell(i, j, k)]) os << "capture " << i << ' ' << j << ' ' << k << ' ' << det << '\n';
                }
            }
        }
    }
    for (int det = 1; det <= 2; ++det) {
        const auto& s = det == 1 ? d.sex1 : d.sex2;
        for (int i = 0; i < d.M; ++i) {
            if (s[i] >= 0) os << "sex " << det << ' ' << i << ' ' << int(s[i]) << '\n';
        }
    }
}

CaptureDataset read_dataset(std::istream& is) {
    RecordReader rd(is, kDatasetHeader);
    std::vector<std::string> f;
    int M = -1, J = -1, K = -1, n_full = -1;
    StateSpace space;
    bool have_space = false;
    TrapGrid traps;
    struct Cap {
        int i, j, k, det;
    };
    std::vector<Cap> caps;
    std::vector<Cap> sexes;
    while (rd.next(f)) {
        const std::string& key = f[0];
        if (key == "M" || key == "J" || key == "K" || key == "n_full") {
            rd.expect(f, 2);
            const int v = parse_int<int>(f[1]);
            (key == "M" ? M : key == "J" ? J : key == "K" ? K : n_full) = v;
        } else if (key == "statespace") {
            rd.expect(f, 6);
            space = StateSpace{parse_double(f[1]), parse_double(f[2]), parse_double(f[3]),
                               parse_double(f[4]), parse_double(f[5])};
            have_space = true;
        } else if (key == "trap") {
            rd.expect(f, 3);
            traps.locations.push_back({parse_double(f[1]), parse_double(f[2])});
        } else if (key == "capture") {
            rd.expect(f, 5);
            caps.push_back({parse_int<int>(f[1]), parse_int<int>(f[2]), parse_int<int>(f[3]),
                            parse_int<int>(f[4])});
        } else if (key == "sex") {
            rd.expect(f, 4);
            sexes.push_back({parse_int<int>(f[2]), 0, parse_int<int>(f[3]), parse_int<int>(f[1])});
        } else {
            rd.fail("unknown record '" + key + "'");
        }
    }
    if (M < 1 || J < 1 || K < 1 || n_full < 0 || !have_space) {
        throw DataError("dataset is missing M, J, K, n_full or statespace");
    }
    if (traps.size() != J) throw DataError("dataset declares J = " + std::to_string(J) + " but lists " +
                                           std::to_string(traps.size()) + " traps");
    CaptureDataset d = CaptureDataset::empty(M, K, space, traps);
    d.n_full = n_full;
    for (const Cap& c : caps) {
        if (c.i < 0 || c.i >= M || c.j < 0 || c.j >= J || c.k < 0 || c.k >= K || (c.det != 1 && c.det != 2)) {
            throw DataError("capture record out of range");
        }
        (c.det == 1 ? d.y1 : d.y2)[d.cell(c.i, c.j, c.k)] = 1;
    }
    for (const Cap& s : sexes) {
        if (s.i < 0 || s.i >= M || (s.det != 1 && s.det != 2) || (s.k != 0 && s.k != 1)) {
            throw DataError("sex record out of range");
        }
        (s.det == 1 ? d.sex1 : d.sex2)[s.i] = static_cast<std::int8_t>(s.k);
    }
    d.validate();
    return d;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + tmp.string());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!os) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void save_dataset(const CaptureDataset& data, const std::filesystem::path& path) {
    std::ostringstream os;
    write_dataset(data, os);
    write_text_file(path, os.str());
}

CaptureDataset load_dataset(const std::filesystem::path& path) {
    std::istringstream is(read_text_file(path));
    return read_dataset(is);
}

std::uint64_t dataset_hash(const CaptureDataset& data) {
    std::ostringstream os;
    write_dataset(data, os);
    return fnv1a(os.str());
}

void write_truth(const TruthRecord& t, std::ostream& os) {
    os << kTruthHeader << '\n';
    os << "N " << t.N << '\n' << "N_male " << t.N_male << '\n' << "M " << t.z.size() << '\n';
    for (std::size_t i = 0; i < t.z.size(); ++i) {
        os << "ind " << i << ' ' << int(t.z[i]) << ' ' << int(t.u[i]) << ' ' << format_double(t.s[i].x)
           << ' ' << format_double(t.s[i].y) << '\n';
    }
    for (std::size_t r = 0; r < t.L.size(); ++r) os << "link " << r << ' ' << t.L[r] << '\n';
}

TruthRecord read_truth(std::istream& is) {
    RecordReader rd(is, kTruthHeader);
    std::vector<std::string> f;
    TruthRecord t;
    int M = -1;
    std::vector<char> seen_ind, seen_link;
    while (rd.next(f)) {
        const std::string& key = f[0];
        if (key == "N" || key == "N_male") {
            rd.expect(f, 2);
            (key == "N" ? t.N : t.N_male) = parse_int<int>(f[1]);
        } else if (key == "M") {
            rd.expect(f, 2);
            M = parse_int<int>(f[1]);
            if (M < 1) rd.fail("M must be positive");
            t.z.assign(M, 0);
            t.u.assign(M, 0);
            t.s.assign(M, Point{});
            t.L.assign(M, -1);
            seen_ind.assign(M, 0);
            seen_link.assign(M, 0);
        } else if (key == "ind") {
            rd.expect(f, 6);
            const int i = parse_int<int>(f[1]);
            if (i < 0 || i >= M) rd.fail("ind index out of range (is M declared first?)");
            t.z[i] = static_cast<std::uint8_t>(parse_int<int>(f[2]));
            t.u[i] = static_cast<std::uint8_t>(parse_int<int>(f[3]));
            t.s[i] = {parse_double(f[4]), parse_double(f[5])};
            seen_ind[i] = 1;
        } else if (key == "link") {
            rd.expect(f, 3);
            const int r = parse_int<int>(f[1]);
            if (r < 0 || r >= M) rd.fail("link index out of range");
            t.L[r] = parse_int<int>(f[2]);
            seen_link[r] = 1;
        } else {
            rd.fail("unknown record '" + key + "'");
        }
    }
    if (M < 1) throw DataError("truth file does not declare M");
    for (int i = 0; i < M; ++i) {
        if (!seen_ind[i] || !seen_link[i]) throw DataError("truth file is incomplete");
    }
    if (!is_permutation(t.L)) throw DataError("truth links are not a permutation");
    return t;
}

void save_truth(const TruthRecord& truth, const std::filesystem::path& path) {
    std::ostringstream os;
    write_truth(truth, os);
    write_text_file(path, os.str());
}

TruthRecord load_truth(const std::filesystem::path& path) {
    std::istringstream is(read_text_file(path));
    return read_truth(is);
}

std::string schema_line(std::string_view name, int major, int minor) {
    return "# schema: secrms." + std::string(name) + "/" + std::to_string(major) + "." +
           std::to_string(minor);
}

void check_schema(std::string_view line, std::string_view name, int major) {
    const std::string prefix = "# schema: secrms." + std::string(name) + "/";
    if (line.substr(0, prefix.size()) != prefix) {
        throw DataError("missing or wrong schema line (expected secrms." + std::string(name) + ")");
    }
    const std::string_view version = line.substr(prefix.size());
    const auto parts = split(version, '.');
    if (parts.size() != 2) throw DataError("malformed schema version '" + std::string(version) + "'");
    const int got = parse_int<int>(parts[0]);
    parse_int<int>(parts[1]);
    if (got != major) {
        throw DataError("unsupported schema version " + std::string(version) + " for secrms." +
                        std::string(name) + " (expected major " + std::to_string(major) + ")");
    }
}

json to_json(const McmcConfig& c) {
    json s = json::array();
    for (const Point& p : c.s_support) s.push_back({p.x, p.y});
    return {{"n_iter", c.n_iter},
            {"burn_in", c.burn_in},
            {"thin", c.thin},
            {"scale_prob", c.scale_prob},
            {"scale_sigma", c.scale_sigma},
            {"scale_s", c.scale_s},
            {"l_swaps", c.l_swaps},
            {"seed", c.seed},
            {"flat_likelihood", c.flat_likelihood},
            {"update_scalars", c.update_scalars},
            {"update_z", c.update_z},
            {"update_u", c.update_u},
            {"update_s", c.update_s},
            {"update_l", c.update_l},
            {"s_support", s}};
}

McmcConfig mcmc_config_from_json(const json& j) {
    McmcConfig c;
    try {
        c.n_iter = j.at("n_iter").get<int>();
        c.burn_in = j.at("burn_in").get<int>();
        c.thin = j.at("thin").get<int>();
        c.scale_prob = j.at("scale_prob").get<double>();
        c.scale_sigma = j.at("scale_sigma").get<double>();
        c.scale_s = j.at("scale_s").get<double>();
        c.l_swaps = j.at("l_swaps").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.flat_likelihood = j.at("flat_likelihood").get<bool>();
        c.update_scalars = j.at("update_scalars").get<bool>();
        c.update_z = j.at("update_z").get<bool>();
        c.update_u = j.at("update_u").get<bool>();
        c.update_s = j.at("update_s").get<bool>();
        c.update_l = j.at("update_l").get<bool>();
        for (const auto& p : j.at("s_support")) c.s_support.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    } catch (const json::exception& e) {
        throw DataError(std::string("bad MCMC configuration: ") + e.what());
    }
    return c;
}

json chain_metadata(const Chain& chain) {
    json acc = json::object();
    for (Param p : active_params(chain.model)) {
        acc[std::string(to_string(p))] = chain.acceptance.of(p).rate();
    }
    acc["s"] = chain.acceptance.s.rate();
    acc["L"] = chain.acceptance.l.rate();
    return {{"model", std::string(to_string(chain.model))},
            {"R", chain.prior.R},
            {"mcmc", to_json(chain.config)},
            {"n_draws", chain.size()},
            {"acceptance", acc}};
}

void write_chain_csv(const Chain& chain, std::ostream& os) {
    os << schema_line("chain", 1, 0) << '\n';
    os << "draw,log_lik,log_prior,log_latent_prior";
    for (Param p : kAllParams) os << ',' << to_string(p);
    os << ",z,u,L,S\n";
    const int thin = chain.config.thin;
    for (std::size_t d = 0; d < chain.size(); ++d) {
        const Draw& dr = chain.draws[d];
        os << chain.config.burn_in + static_cast<long>(d) * thin << ',' << format_double(dr.log_lik)
           << ',' << format_double(dr.log_prior) << ',' << format_double(dr.log_latent_prior);
        for (Param p : kAllParams) {
            os << ',' << (is_active(chain.model, p) ? format_double(dr.params.get(p)) : "NA");
        }
        os << ',';
        for (auto z : dr.latent.z) os << (z ? '1' : '0');
        os << ',';
        for (auto u : dr.latent.u) os << (u ? '1' : '0');
        os << ',';
        for (std::size_t r = 0; r < dr.latent.L.size(); ++r) os << (r ? "-" : "") << dr.latent.L[r];
        os << ',';
        for (const Point& s : dr.latent.s) os << format_double(s.x) << ':' << format_double(s.y) << ';';
        os << '\n';
    }
}

Chain read_chain_csv(std::istream& is, const json& metadata, const CaptureDataset& data) {
    Chain chain;
    try {
        chain.model = parse_model(metadata.at("model").get<std::string>());
        chain.prior.R = metadata.at("R").get<double>();
        chain.config = mcmc_config_from_json(metadata.at("mcmc"));
    } catch (const json::exception& e) {
        throw DataError(std::string("bad chain metadata: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("bad chain metadata: ") + e.what());
    }
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty chain file");
    check_schema(line, "chain", 1);
    if (!std::getline(is, line)) throw DataError("chain file has no header");
    const Likelihood lik(chain.model, data);
    const std::size_t M = static_cast<std::size_t>(data.M);
    int row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 4 + kAllParams.size() + 4) {
            throw DataError("chain row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
        }
        Draw d;
        d.log_lik = parse_double(f[1]);
        d.log_prior = parse_double(f[2]);
        d.log_latent_prior = parse_double(f[3]);
        for (std::size_t k = 0; k < kAllParams.size(); ++k) {
            if (f[4 + k] != "NA") d.params.set(kAllParams[k], parse_double(f[4 + k]));
        }
        const std::size_t base = 4 + kAllParams.size();
        const std::string_view z = f[base], u = f[base + 1];
        if (z.size() != M || u.size() != M) throw DataError("chain row " + std::to_string(row) + ": z/u length differs from M");
        for (std::size_t i = 0; i < M; ++i) {
            d.latent.z.push_back(z[i] == '1');
            d.latent.u.push_back(u[i] == '1');
        }
        for (auto v : split(f[base + 2], '-')) d.latent.L.push_back(parse_int<int>(v));
        auto pts = split(f[base + 3], ';');
        if (!pts.empty() && pts.back().empty()) pts.pop_back();
        for (auto p : pts) {
            const auto xy = split(p, ':');
            if (xy.size() != 2) throw DataError("chain row " + std::to_string(row) + ": bad centre");
            d.latent.s.push_back({parse_double(xy[0]), parse_double(xy[1])});
        }
        if (d.latent.L.size() != M || d.latent.s.size() != M || !is_permutation(d.latent.L)) {
            throw DataError("chain row " + std::to_string(row) + ": latent state does not match the dataset");
        }
        d.individual_log_lik = lik.per_individual(d.params, d.latent);
        chain.draws.push_back(std::move(d));
    }
    return chain;
}

} // namespace secrms
