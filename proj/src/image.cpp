#include "richctl/image.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace richctl {

Image to_latent(const Image& pixels) {
    Image out = pixels;
    for (auto& v : out.data) v = 2.f * v - 1.f;
    return out;
}

Image from_latent(const Image& latent) {
    Image out = latent;
    out.t = 0;
    for (auto& v : out.data) v = std::clamp(0.5f * (v + 1.f), 0.f, 1.f);
    return out;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
    if (img.c != 1 && img.c != 3)
        throw std::invalid_argument("write_pnm: only 1- or 3-channel images supported");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pnm: cannot open " + path.string());
    f << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> row(size_t(img.w) * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                float v = std::clamp(img.at(y, x, ch), 0.f, 1.f);
                row[size_t(x) * img.c + ch] = (unsigned char)std::lround(v * 255.f);
            }
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("read_pnm: cannot open " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P5" && magic != "P6")
        throw std::invalid_argument("read_pnm: unsupported format in " + path.string());
    auto next_int = [&f, &path]() {
        int v;
        // skip whitespace and '#' comments
        for (;;) {
            int ch = f.peek();
            if (ch == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(ch)) {
                f.get();
            } else {
                break;
            }
        }
        if (!(f >> v)) throw std::invalid_argument("read_pnm: bad header in " + path.string());
        return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    f.get();  // single whitespace after maxval
    int c = magic == "P6" ? 3 : 1;
    Image img(h, w, c);
    std::vector<unsigned char> buf(size_t(w) * h * c);
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (f.gcount() != std::streamsize(buf.size()))
        throw std::invalid_argument("read_pnm: truncated file " + path.string());
    for (size_t i = 0; i < buf.size(); ++i) img.data[i] = float(buf[i]) / float(maxval);
    return img;
}

uint64_t fnv1a(const void* bytes, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

uint64_t fnv1a_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("fnv1a_file: cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string s = ss.str();
    return fnv1a(s.data(), s.size());
}

}  // namespace richctl
