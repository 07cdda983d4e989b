#include "pipebench/image.hpp"

#include <cstdio>
#include <fstream>

namespace pipebench {

void write_pgm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!f) throw DataError("write failed: " + path);
}

Image read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open image: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw DataError("not a P5 PGM: " + path);
    // header tokens may be separated by whitespace or comment lines
    auto next_int = [&](const char* what) {
        int c = f.peek();
        while (c == '#' || std::isspace(c)) {
            if (c == '#') f.ignore(1 << 16, '\n');
            else f.get();
            c = f.peek();
        }
        long v = -1;
        f >> v;
        if (!f || v < 0) throw DataError(std::string("bad PGM ") + what + ": " + path);
        return static_cast<int>(v);
    };
    int w = next_int("width");
    int h = next_int("height");
    int maxval = next_int("maxval");
    if (maxval != 255) throw DataError("unsupported PGM maxval: " + path);
    f.get();  // single whitespace after maxval
    Image img(h, w);
    f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.px.size()))
        throw DataError("truncated PGM: " + path);
    return img;
}

}  // namespace pipebench
