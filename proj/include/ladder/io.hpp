#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ladder/errors.hpp"

namespace ladder {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

// Crash-safe commit: write the full content to <path>.tmp, flush, then
// rename over the target. Readers either see the old file or the new one.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// Calls fn(line_text, line_number) for every line; line numbers are 1-based.
// A trailing newline does not produce an empty final line.
inline void for_each_line(const std::string& content,
                          const std::function<void(const std::string&, size_t)>& fn) {
    size_t pos = 0, lineno = 0;
    while (pos < content.size()) {
        size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) nl = content.size();
        ++lineno;
        std::string line = content.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        fn(line, lineno);
        pos = nl + 1;
    }
}

}  // namespace ladder
