#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

#include "glandsynth/dataio.hpp"
#include "glandsynth/errors.hpp"

namespace gsyn {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::size_t element_size(MetaElementType t) {
    switch (t) {
        case MetaElementType::int8:
        case MetaElementType::uint8: return 1;
        case MetaElementType::int16:
        case MetaElementType::uint16: return 2;
        case MetaElementType::float32: return 4;
    }
    return 0;
}

MetaElementType parse_element_type(const std::string& s, const fs::path& where) {
    if (s == "MET_CHAR") return MetaElementType::int8;
    if (s == "MET_UCHAR") return MetaElementType::uint8;
    if (s == "MET_SHORT") return MetaElementType::int16;
    if (s == "MET_USHORT") return MetaElementType::uint16;
    if (s == "MET_FLOAT") return MetaElementType::float32;
    throw IoError("metaimage: unsupported ElementType '" + s + "' in " + where.string());
}

const char* element_type_name(MetaElementType t) {
    switch (t) {
        case MetaElementType::int8: return "MET_CHAR";
        case MetaElementType::uint8: return "MET_UCHAR";
        case MetaElementType::int16: return "MET_SHORT";
        case MetaElementType::uint16: return "MET_USHORT";
        case MetaElementType::float32: return "MET_FLOAT";
    }
    return "";
}

bool parse_bool(const std::string& v) {
    const auto l = lower(v);
    return l == "true" || l == "1" || l == "yes";
}

template <typename T>
float load_le(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<float>(v);
}

}  // namespace

MetaImage read_metaimage(const fs::path& header) {
    std::ifstream is(header, std::ios::binary);
    if (!is) throw IoError("metaimage: missing header " + header.string());

    std::map<std::string, std::string> fields;
    std::string line;
    std::streamoff local_offset = -1;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        fields[key] = value;
        if (key == "ElementDataFile") {
            if (value == "LOCAL") local_offset = is.tellg();
            break;
        }
    }

    auto require = [&](const char* key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) throw IoError(std::string("metaimage: missing ") + key + " in " + header.string());
        return it->second;
    };

    for (const char* k : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"}) {
        if (auto it = fields.find(k); it != fields.end() && parse_bool(it->second)) {
            throw IoError("metaimage: big-endian payloads are not supported (" + header.string() + ")");
        }
    }
    if (auto it = fields.find("ElementNumberOfChannels"); it != fields.end() && std::stoi(it->second) != 1) {
        throw IoError("metaimage: multi-channel images are not supported");
    }

    const int ndims = std::stoi(require("NDims"));
    if (ndims < 2 || ndims > 3) throw IoError("metaimage: NDims must be 2 or 3 in " + header.string());
    std::vector<long> dims;
    {
        std::istringstream ss(require("DimSize"));
        long d;
        while (ss >> d) dims.push_back(d);
    }
    if (static_cast<int>(dims.size()) != ndims) throw IoError("metaimage: DimSize does not match NDims");
    if (ndims == 2) dims.push_back(1);
    for (long d : dims) {
        if (d <= 0) throw IoError("metaimage: non-positive DimSize");
    }

    std::vector<double> spacing(3, 1.0);
    const auto sp_it = fields.count("ElementSpacing") ? fields.find("ElementSpacing") : fields.find("ElementSize");
    if (sp_it != fields.end()) {
        std::istringstream ss(sp_it->second);
        for (int i = 0; i < ndims; ++i) {
            if (!(ss >> spacing[static_cast<std::size_t>(i)])) throw IoError("metaimage: malformed ElementSpacing");
        }
    }
    for (double s : spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) throw IoError("metaimage: spacing must be positive");
    }

    MetaImage img;
    img.element_type = parse_element_type(require("ElementType"), header);
    img.spacing_mm = Spacing3{spacing[2], spacing[1], spacing[0]};
    const bool compressed = fields.count("CompressedData") && parse_bool(fields["CompressedData"]);
    const std::string& data_file = require("ElementDataFile");

    std::vector<unsigned char> payload;
    if (local_offset >= 0) {
        is.clear();
        is.seekg(0, std::ios::end);
        const auto end = is.tellg();
        payload.resize(static_cast<std::size_t>(end - local_offset));
        is.seekg(local_offset);
        is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    } else {
        const fs::path data_path = header.parent_path() / data_file;
        std::ifstream ds(data_path, std::ios::binary);
        if (!ds) throw IoError("metaimage: missing payload " + data_path.string());
        payload.assign(std::istreambuf_iterator<char>(ds), std::istreambuf_iterator<char>());
    }

    const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    const std::size_t expected = count * element_size(img.element_type);
    if (compressed) {
        std::vector<unsigned char> raw(expected);
        uLongf dest_len = static_cast<uLongf>(expected);
        const int rc = uncompress(raw.data(), &dest_len, payload.data(), static_cast<uLong>(payload.size()));
        if (rc != Z_OK || dest_len != expected) {
            throw IoError("metaimage: compressed payload does not inflate to " + std::to_string(expected) +
                          " bytes (" + header.string() + ")");
        }
        payload = std::move(raw);
    } else if (payload.size() != expected) {
        throw IoError("metaimage: payload has " + std::to_string(payload.size()) + " bytes, header declares " +
                      std::to_string(expected) + " (" + header.string() + ")");
    }

    img.voxels = Grid3<float>(static_cast<int>(dims[2]), static_cast<int>(dims[1]), static_cast<int>(dims[0]));
    const unsigned char* p = payload.data();
    const std::size_t es = element_size(img.element_type);
    for (std::size_t i = 0; i < count; ++i, p += es) {
        float v = 0.0f;
        switch (img.element_type) {
            case MetaElementType::int8: v = load_le<std::int8_t>(p); break;
            case MetaElementType::uint8: v = load_le<std::uint8_t>(p); break;
            case MetaElementType::int16: v = load_le<std::int16_t>(p); break;
            case MetaElementType::uint16: v = load_le<std::uint16_t>(p); break;
            case MetaElementType::float32: v = load_le<float>(p); break;
        }
        if (!std::isfinite(v)) throw IoError("metaimage: non-finite voxel in " + header.string());
        img.voxels.vox[i] = v;
    }
    return img;
}

void write_metaimage(const fs::path& header, const Grid3<float>& voxels, const Spacing3& spacing,
                     MetaElementType type, bool compressed) {
    if (header.has_parent_path()) fs::create_directories(header.parent_path());
    const std::string data_name = header.stem().string() + (compressed ? ".zraw" : ".raw");
    const std::size_t es = element_size(type);
    std::vector<unsigned char> raw(voxels.size() * es);
    unsigned char* p = raw.data();
    for (float v : voxels.vox) {
        switch (type) {
            case MetaElementType::int8: { auto x = static_cast<std::int8_t>(std::lround(v)); std::memcpy(p, &x, 1); break; }
            case MetaElementType::uint8: { auto x = static_cast<std::uint8_t>(std::lround(v)); std::memcpy(p, &x, 1); break; }
            case MetaElementType::int16: { auto x = static_cast<std::int16_t>(std::lround(v)); std::memcpy(p, &x, 2); break; }
            case MetaElementType::uint16: { auto x = static_cast<std::uint16_t>(std::lround(v)); std::memcpy(p, &x, 2); break; }
            case MetaElementType::float32: std::memcpy(p, &v, 4); break;
        }
        p += es;
    }
    if (compressed) {
        uLongf bound = compressBound(static_cast<uLong>(raw.size()));
        std::vector<unsigned char> packed(bound);
        if (compress(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size())) != Z_OK) {
            throw IoError("metaimage: zlib compression failed");
        }
        packed.resize(bound);
        raw = std::move(packed);
    }

    std::ofstream hs(header);
    if (!hs) throw IoError("metaimage: cannot write " + header.string());
    hs << "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n";
    hs << "CompressedData = " << (compressed ? "True" : "False") << "\n";
    if (compressed) hs << "CompressedDataSize = " << raw.size() << "\n";
    hs << "ElementSpacing = " << spacing.col << " " << spacing.row << " " << spacing.slice << "\n";
    hs << "DimSize = " << voxels.cols << " " << voxels.rows << " " << voxels.slices << "\n";
    hs << "ElementType = " << element_type_name(type) << "\n";
    hs << "ElementDataFile = " << data_name << "\n";

    std::ofstream ds(header.parent_path() / data_name, std::ios::binary);
    ds.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!ds) throw IoError("metaimage: cannot write payload for " + header.string());
}

}  // namespace gsyn
