import * as fs from "fs";
import * as path from "path";

export interface ImageEntry {
  id: string;
  path: string;
  height: number;
  width: number;
  channels: number;
  range: "symmetric" | "unit";
}

export interface Manifest {
  schemaVersion: number;
  images: ImageEntry[];
  baseDir: string;
}

export class ManifestError extends Error {}

function requireField<T>(
  obj: Record<string, unknown>,
  key: string,
  kind: "string" | "number",
  where: string,
): T {
  const value = obj[key];
  if (typeof value !== kind) {
    throw new ManifestError(`${where}.${key}: expected ${kind}, got ${typeof value}`);
  }
  return value as T;
}

/** Load and validate a dataset manifest (schema version 1). */
export function loadManifest(manifestPath: string): Manifest {
  if (!fs.existsSync(manifestPath)) {
    throw new ManifestError(`manifest file not found: ${manifestPath}`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(fs.readFileSync(manifestPath, "utf-8"));
  } catch (err) {
    throw new ManifestError(`manifest is not valid JSON: ${err}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ManifestError("manifest top level must be an object");
  }
  const root = doc as Record<string, unknown>;
  if (root["schema_version"] !== 1) {
    throw new ManifestError(`unsupported schema_version ${root["schema_version"]}`);
  }
  if (!Array.isArray(root["images"])) {
    throw new ManifestError("$.images: expected an array");
  }
  const images: ImageEntry[] = [];
  const seen = new Set<string>();
  (root["images"] as unknown[]).forEach((item, i) => {
    const where = `$.images[${i}]`;
    if (typeof item !== "object" || item === null) {
      throw new ManifestError(`${where}: expected an object`);
    }
    const entry = item as Record<string, unknown>;
    const id = requireField<string>(entry, "id", "string", where);
    const range = requireField<string>(entry, "range", "string", where);
    if (range !== "symmetric" && range !== "unit") {
      throw new ManifestError(`${where}.range: unknown range tag ${range}`);
    }
    if (seen.has(id)) {
      throw new ManifestError(`${where}.id: duplicate image id ${id}`);
    }
    seen.add(id);
    images.push({
      id,
      path: requireField<string>(entry, "path", "string", where),
      height: requireField<number>(entry, "height", "number", where),
      width: requireField<number>(entry, "width", "number", where),
      channels: requireField<number>(entry, "channels", "number", where),
      range: range as "symmetric" | "unit",
    });
  });
  return {
    schemaVersion: 1,
    images,
    baseDir: path.dirname(path.resolve(manifestPath)),
  };
}

export function resolvePayloadPath(manifest: Manifest, entry: ImageEntry): string {
  return path.isAbsolute(entry.path)
    ? entry.path
    : path.join(manifest.baseDir, entry.path);
}

/** Raw little-endian float32 payload; byte count must match the shape. */
export function loadPayload(manifest: Manifest, entry: ImageEntry): Float32Array {
  const payloadPath = resolvePayloadPath(manifest, entry);
  const expected = entry.height * entry.width * entry.channels;
  if (!fs.existsSync(payloadPath)) {
    throw new ManifestError(`payload for image ${entry.id} not found: ${payloadPath}`);
  }
  const bytes = fs.readFileSync(payloadPath);
  if (bytes.length !== expected * 4) {
    throw new ManifestError(
      `shape mismatch for image ${entry.id}: payload holds ` +
        `${bytes.length / 4} floats, manifest declares ${expected}`,
    );
  }
  return new Float32Array(bytes.buffer, bytes.byteOffset, expected);
}
